#pragma once

// Knowledge distillation: temperature-softened teacher targets, the
// distillation loss, and the alpha-blended objective driving student
// training against a frozen teacher.

#include <cstddef>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "lsfidm/student.hpp"
#include "lsfidm/teacher.hpp"

namespace lsfidm::distill {

using numerics::Tensor;
using student::StudentConfig;
using student::StudentModel;
using teacher::TeacherModel;
using teacher::TrainLog;

struct DistillConfig {
    double temperature = 2.0;
    double alpha = 0.5;
    // Eq. 9 writes the student log-probability without a temperature; the
    // default softens both sides, strict_eq9 leaves the student at T = 1.
    bool strict_eq9 = false;
    bool t2_rescale = false;
    StudentConfig student;

    void validate() const {
        if (!(temperature > 0.0)) throw std::invalid_argument("distill config: T must be > 0");
        if (alpha < 0.0 || alpha > 1.0)
            throw std::invalid_argument("distill config: alpha must be in [0,1]");
        student.validate();
    }

    nlohmann::json to_json() const {
        return {{"temperature", temperature},
                {"alpha", alpha},
                {"strict_eq9", strict_eq9},
                {"t2_rescale", t2_rescale},
                {"student", student.to_json()}};
    }

    static DistillConfig from_json(const nlohmann::json& j) {
        DistillConfig c;
        c.temperature = j.value("temperature", c.temperature);
        c.alpha = j.value("alpha", c.alpha);
        c.strict_eq9 = j.value("strict_eq9", c.strict_eq9);
        c.t2_rescale = j.value("t2_rescale", c.t2_rescale);
        if (j.contains("student")) c.student = StudentConfig::from_json(j["student"]);
        return c;
    }
};

// Row-wise p_i = exp(Z_i/T) / sum_j exp(Z_j/T). T = 1 is plain softmax; large
// T flattens towards uniform.
template <typename T>
Tensor<T> soften_logits(const Tensor<T>& logits, T temperature) {
    if (!(temperature > T(0))) throw std::invalid_argument("soften_logits: T must be > 0");
    return numerics::softmax_rows(numerics::scale(logits, T(1) / temperature));
}

// Value-level distillation loss: cross-entropy of the student's (optionally
// T-softened) distribution against teacher soft targets, averaged over the
// batch.
template <typename T>
T kd_loss(const Tensor<T>& student_logits, const Tensor<T>& teacher_soft, T temperature,
          bool soften_student = true, bool t2_rescale = false) {
    numerics::Tape<T> tape;
    auto loss = numerics::kd_cross_entropy(tape.constant(student_logits), teacher_soft,
                                           temperature, soften_student, t2_rescale);
    return loss.value().item();
}

// alpha * CE + (1 - alpha) * KD.
template <typename T>
T combined_loss(T ce, T kd, T alpha) {
    if (alpha < T(0) || alpha > T(1))
        throw std::invalid_argument("combined_loss: alpha must be in [0,1]");
    return alpha * ce + (T(1) - alpha) * kd;
}

// Teacher soft targets for every training example, computed once: the
// teacher is frozen, so its per-example distribution never changes across
// epochs.
template <typename T>
Tensor<T> teacher_soft_targets(TeacherModel<T>& teacher_model,
                               std::span<const canio::Example> examples, T temperature,
                               std::size_t n_threads = 1) {
    std::vector<canio::TokenSequence> sequences;
    sequences.reserve(examples.size());
    for (const auto& ex : examples) sequences.push_back(ex.tokens);
    Tensor<T> logits = teacher_model.logits_for(sequences, 256, n_threads);
    return soften_logits(logits, temperature);
}

// Algorithm: per batch the frozen teacher's softened distribution joins the
// hard-label cross-entropy through the alpha blend; only the student is
// updated.
template <typename T>
StudentModel<T> train_student_with_kd(const canio::DatasetSplit& dataset,
                                      TeacherModel<T>& teacher_model, const DistillConfig& config,
                                      std::uint64_t seed, TrainLog* log = nullptr,
                                      std::size_t n_threads = 1) {
    config.validate();
    teacher::detail::require_two_classes(dataset.train, "train_student_with_kd");
    if (!dataset.train.empty() &&
        dataset.train.front().tokens.tokens.size() != teacher_model.config().max_length)
        throw std::invalid_argument("train_student_with_kd: teacher/dataset max_length mismatch");

    Tensor<T> targets = teacher_soft_targets(teacher_model, dataset.train,
                                             static_cast<T>(config.temperature), n_threads);
    StudentModel<T> model = student::make_student<T>(config.student, seed);
    student::detail::train_core(model, dataset, config.student, seed, &targets, config.alpha,
                                config.temperature, !config.strict_eq9, config.t2_rescale, log);
    return model;
}

}  // namespace lsfidm::distill
