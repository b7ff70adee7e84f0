#pragma once

// Lightweight detectors: a stacked BiLSTM over the 10 normalized frame
// fields treated as a length-10 sequence, and a two-hidden-layer DNN
// baseline. Both end in a 2-logit affine head.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lsfidm/autograd.hpp"
#include "lsfidm/canio.hpp"
#include "lsfidm/optim.hpp"
#include "lsfidm/rng.hpp"
#include "lsfidm/teacher.hpp"  // TrainStep/TrainLog and shared training constants

namespace lsfidm::student {

using numerics::Param;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;
using teacher::TrainLog;

inline constexpr std::size_t kFeatureDim = 10;

enum class StudentKind { BiLstm, Dnn };

inline const char* student_kind_name(StudentKind k) {
    return k == StudentKind::BiLstm ? "bilstm" : "dnn";
}

inline StudentKind student_kind_from(const std::string& s) {
    if (s == "bilstm") return StudentKind::BiLstm;
    if (s == "dnn") return StudentKind::Dnn;
    throw std::invalid_argument("unknown student kind '" + s + "'");
}

struct StudentConfig {
    StudentKind kind = StudentKind::BiLstm;
    std::size_t hidden_size = 64;
    std::size_t lstm_layers = 2;
    std::size_t batch_size = 1024;
    double learning_rate = 1e-5;
    std::size_t epochs = 8;

    void validate() const {
        if (hidden_size == 0 || lstm_layers == 0 || batch_size == 0)
            throw std::invalid_argument("student config: zero-sized component");
        if (learning_rate <= 0.0) throw std::invalid_argument("student config: bad learning rate");
    }

    nlohmann::json to_json() const {
        return {{"kind", student_kind_name(kind)},
                {"hidden_size", hidden_size},
                {"lstm_layers", lstm_layers},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"epochs", epochs}};
    }

    static StudentConfig from_json(const nlohmann::json& j) {
        StudentConfig c;
        if (j.contains("kind")) c.kind = student_kind_from(j["kind"].get<std::string>());
        c.hidden_size = j.value("hidden_size", c.hidden_size);
        c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        return c;
    }
};

// One LSTM cell. Gate weights act on the concatenation [h_{t-1}, x_t].
template <typename T>
struct LstmCell {
    Param<T> w_i, w_o, w_f, w_c;
    Param<T> b_i, b_o, b_f, b_c;
    std::size_t input_dim = 0;
    std::size_t hidden = 0;

    LstmCell() = default;

    LstmCell(const std::string& prefix, std::size_t input, std::size_t h, Rng& rng)
        : input_dim(input), hidden(h) {
        const std::size_t in = h + input;
        w_i = Param<T>(prefix + ".Wi", numerics::xavier_uniform<T>(in, h, in, h, rng));
        w_o = Param<T>(prefix + ".Wo", numerics::xavier_uniform<T>(in, h, in, h, rng));
        w_f = Param<T>(prefix + ".Wf", numerics::xavier_uniform<T>(in, h, in, h, rng));
        w_c = Param<T>(prefix + ".Wc", numerics::xavier_uniform<T>(in, h, in, h, rng));
        b_i = Param<T>(prefix + ".bi", Tensor<T>(1, h));
        b_o = Param<T>(prefix + ".bo", Tensor<T>(1, h));
        b_f = Param<T>(prefix + ".bf", Tensor<T>(1, h));
        b_c = Param<T>(prefix + ".bc", Tensor<T>(1, h));
    }

    std::vector<Param<T>*> parameters() {
        return {&w_i, &w_o, &w_f, &w_c, &b_i, &b_o, &b_f, &b_c};
    }
};

// Per-tape parameter bindings for a cell, reused across timesteps.
template <typename T>
struct BoundLstmCell {
    Var<T> w_i, w_o, w_f, w_c, b_i, b_o, b_f, b_c;
    std::size_t input_dim = 0;
    std::size_t hidden = 0;
};

template <typename T>
BoundLstmCell<T> bind(Tape<T>& tape, LstmCell<T>& cell) {
    return {tape.param(cell.w_i), tape.param(cell.w_o), tape.param(cell.w_f),
            tape.param(cell.w_c), tape.param(cell.b_i), tape.param(cell.b_o),
            tape.param(cell.b_f), tape.param(cell.b_c), cell.input_dim, cell.hidden};
}

// The gate updates: i/o/f = sigmoid(W.[h,x] + b), c~ = tanh(Wc.[h,x] + bc),
// c_t = f.c_{t-1} + i.c~,  h_t = o.tanh(c_t).
template <typename T>
std::pair<Var<T>, Var<T>> lstm_step(Tape<T>& tape, const BoundLstmCell<T>& cell, Var<T> h_prev,
                                    Var<T> c_prev, Var<T> x_t) {
    using namespace numerics;
    if (h_prev.value().cols() != cell.hidden || x_t.value().cols() != cell.input_dim)
        throw std::invalid_argument("lstm_step: shape mismatch");
    Var<T> z = concat(h_prev, x_t, 1);
    Var<T> gate_i = sigmoid(add(matmul(z, cell.w_i), cell.b_i));
    Var<T> gate_o = sigmoid(add(matmul(z, cell.w_o), cell.b_o));
    Var<T> gate_f = sigmoid(add(matmul(z, cell.w_f), cell.b_f));
    Var<T> c_cand = tanh(add(matmul(z, cell.w_c), cell.b_c));
    Var<T> c_t = add(mul(gate_f, c_prev), mul(gate_i, c_cand));
    Var<T> h_t = mul(gate_o, tanh(c_t));
    return {h_t, c_t};
}

// Convenience overload binding the cell on the given tape.
template <typename T>
std::pair<Var<T>, Var<T>> lstm_step(Tape<T>& tape, LstmCell<T>& cell, Var<T> h_prev,
                                    Var<T> c_prev, Var<T> x_t) {
    return lstm_step(tape, bind(tape, cell), h_prev, c_prev, x_t);
}

template <typename T>
class BiLstmModel {
public:
    BiLstmModel() = default;

    BiLstmModel(const StudentConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng = Rng::fork(seed, 0);
        const std::size_t h = config_.hidden_size;
        for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
            const std::size_t input = l == 0 ? 1 : h;
            fwd_.emplace_back("fwd" + std::to_string(l), input, h, rng);
            bwd_.emplace_back("bwd" + std::to_string(l), input, h, rng);
        }
        w_y_ = Param<T>("head.W", numerics::xavier_uniform<T>(2 * h, 2, 2 * h, 2, rng));
        b_y_ = Param<T>("head.b", Tensor<T>(1, 2));
    }

    const StudentConfig& config() const { return config_; }
    std::vector<LstmCell<T>>& forward_cells() { return fwd_; }
    std::vector<LstmCell<T>>& backward_cells() { return bwd_; }

    std::vector<Param<T>*> parameters() {
        std::vector<Param<T>*> ps;
        for (auto& c : fwd_)
            for (Param<T>* p : c.parameters()) ps.push_back(p);
        for (auto& c : bwd_)
            for (Param<T>* p : c.parameters()) ps.push_back(p);
        ps.push_back(&w_y_);
        ps.push_back(&b_y_);
        return ps;
    }

    // x is [batch x 10]; each field becomes one timestep of width 1. The
    // final forward and final backward hidden states are concatenated and
    // mapped to 2 logits.
    Var<T> forward(Tape<T>& tape, Var<T> x) {
        using namespace numerics;
        if (x.value().cols() != kFeatureDim)
            throw std::invalid_argument("bilstm forward: expected 10 features");
        const std::size_t batch = x.value().rows();
        std::vector<Var<T>> steps(kFeatureDim);
        for (std::size_t t = 0; t < kFeatureDim; ++t) steps[t] = slice_cols(x, t, t + 1);

        auto run_stack = [&](std::vector<LstmCell<T>>& cells, bool reversed) -> Var<T> {
            std::vector<Var<T>> seq = steps;
            if (reversed) std::reverse(seq.begin(), seq.end());
            Var<T> last_h;
            for (std::size_t l = 0; l < cells.size(); ++l) {
                BoundLstmCell<T> cell = bind(tape, cells[l]);
                Var<T> h = tape.constant(Tensor<T>(batch, config_.hidden_size));
                Var<T> c = tape.constant(Tensor<T>(batch, config_.hidden_size));
                for (std::size_t t = 0; t < seq.size(); ++t) {
                    auto [h_t, c_t] = lstm_step(tape, cell, h, c, seq[t]);
                    h = h_t;
                    c = c_t;
                    seq[t] = h_t;  // becomes the next layer's input
                }
                last_h = h;
            }
            return last_h;
        };

        Var<T> h_fwd = run_stack(fwd_, false);
        Var<T> h_bwd = run_stack(bwd_, true);
        Var<T> both = concat(h_fwd, h_bwd, 1);
        return add(matmul(both, tape.param(w_y_)), tape.param(b_y_));
    }

private:
    StudentConfig config_;
    std::vector<LstmCell<T>> fwd_, bwd_;
    Param<T> w_y_, b_y_;
};

template <typename T>
class DnnModel {
public:
    DnnModel() = default;

    DnnModel(const StudentConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng = Rng::fork(seed, 0);
        const std::size_t h = config_.hidden_size;
        w1_ = Param<T>("fc1.W", numerics::xavier_uniform<T>(kFeatureDim, h, kFeatureDim, h, rng));
        b1_ = Param<T>("fc1.b", Tensor<T>(1, h));
        w2_ = Param<T>("fc2.W", numerics::xavier_uniform<T>(h, h, h, h, rng));
        b2_ = Param<T>("fc2.b", Tensor<T>(1, h));
        w3_ = Param<T>("out.W", numerics::xavier_uniform<T>(h, 2, h, 2, rng));
        b3_ = Param<T>("out.b", Tensor<T>(1, 2));
    }

    const StudentConfig& config() const { return config_; }

    std::vector<Param<T>*> parameters() { return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}; }

    // 10 -> 64 -> 64 -> 2 with ReLU after each hidden affine.
    Var<T> forward(Tape<T>& tape, Var<T> x) {
        using namespace numerics;
        if (x.value().cols() != kFeatureDim)
            throw std::invalid_argument("dnn forward: expected 10 features");
        Var<T> h1 = relu(add(matmul(x, tape.param(w1_)), tape.param(b1_)));
        Var<T> h2 = relu(add(matmul(h1, tape.param(w2_)), tape.param(b2_)));
        return add(matmul(h2, tape.param(w3_)), tape.param(b3_));
    }

private:
    StudentConfig config_;
    Param<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

template <typename T>
using StudentModel = std::variant<BiLstmModel<T>, DnnModel<T>>;

template <typename T>
StudentModel<T> make_student(const StudentConfig& config, std::uint64_t seed) {
    if (config.kind == StudentKind::BiLstm) return BiLstmModel<T>(config, seed);
    return DnnModel<T>(config, seed);
}

template <typename T>
std::vector<Param<T>*> parameters(StudentModel<T>& model) {
    return std::visit([](auto& m) { return m.parameters(); }, model);
}

template <typename T>
const StudentConfig& config_of(const StudentModel<T>& model) {
    return std::visit([](const auto& m) -> const StudentConfig& { return m.config(); }, model);
}

template <typename T>
Var<T> forward(StudentModel<T>& model, Tape<T>& tape, Var<T> x) {
    return std::visit([&](auto& m) { return m.forward(tape, x); }, model);
}

template <typename T>
Tensor<T> features_to_tensor(std::span<const canio::Example> examples) {
    Tensor<T> x(examples.size(), kFeatureDim);
    for (std::size_t i = 0; i < examples.size(); ++i)
        for (std::size_t j = 0; j < kFeatureDim; ++j)
            x(i, j) = static_cast<T>(examples[i].features.values[j]);
    return x;
}

// Inference logits over a full example list; shards across threads when
// asked (parameters are read-only during inference).
template <typename T>
Tensor<T> logits_for(StudentModel<T>& model, std::span<const canio::Example> examples,
                     std::size_t batch_size = 1024, std::size_t n_threads = 1) {
    Tensor<T> out(examples.size(), 2);
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t start = lo; start < hi; start += batch_size) {
            const std::size_t end = std::min(hi, start + batch_size);
            Tape<T> tape;
            Var<T> x = tape.constant(features_to_tensor<T>(examples.subspan(start, end - start)));
            Var<T> logits = forward(model, tape, x);
            const Tensor<T>& lv = logits.value();
            for (std::size_t i = 0; i < lv.rows(); ++i)
                std::copy(lv.row(i), lv.row(i) + 2, out.row(start + i));
        }
    };
    if (n_threads <= 1 || examples.size() < 2 * batch_size) {
        run_range(0, examples.size());
        return out;
    }
    const std::size_t n_batches = (examples.size() + batch_size - 1) / batch_size;
    const std::size_t per = (n_batches + n_threads - 1) / n_threads;
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < n_threads; ++t) {
        const std::size_t lo = std::min(examples.size(), t * per * batch_size);
        const std::size_t hi = std::min(examples.size(), (t + 1) * per * batch_size);
        if (lo < hi) workers.emplace_back(run_range, lo, hi);
    }
    for (auto& w : workers) w.join();
    return out;
}

namespace detail {

// Shared training loop for the plain and distilled paths. When soft_targets
// is non-null it must hold one row per training example (teacher
// probabilities already temperature-softened); the loss becomes
// alpha * CE + (1 - alpha) * KD. Both paths consume the seed identically, so
// an alpha = 1 distillation run reproduces plain training bit for bit.
template <typename T>
void train_core(StudentModel<T>& model, const canio::DatasetSplit& dataset,
                const StudentConfig& config, std::uint64_t seed,
                const Tensor<T>* soft_targets, double alpha, double temperature,
                bool soften_student, bool t2_rescale, TrainLog* log) {
    teacher::detail::require_two_classes(dataset.train, "train_student");
    if (config.epochs == 0) return;
    if (soft_targets && soft_targets->rows() != dataset.train.size())
        throw std::invalid_argument(
            "train_student: teacher/student example misalignment (count mismatch)");

    auto params = parameters(model);
    numerics::Adam<T> opt(params, {.learning_rate = config.learning_rate});
    Rng shuffle_rng = Rng::fork(seed, 1);

    std::vector<std::size_t> order(dataset.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        lsfidm::shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const std::size_t bsize = end - start;

            Tensor<T> x(bsize, kFeatureDim);
            std::vector<int> labels(bsize);
            for (std::size_t i = 0; i < bsize; ++i) {
                const auto& ex = dataset.train[order[start + i]];
                for (std::size_t j = 0; j < kFeatureDim; ++j)
                    x(i, j) = static_cast<T>(ex.features.values[j]);
                labels[i] = static_cast<int>(ex.label);
            }

            Tape<T> tape;
            Var<T> logits = forward(model, tape, tape.constant(std::move(x)));
            Var<T> ce = numerics::cross_entropy_logits(logits, std::move(labels));
            Var<T> loss = ce;
            std::optional<double> kd_value;
            if (soft_targets) {
                Tensor<T> targets(bsize, 2);
                for (std::size_t i = 0; i < bsize; ++i) {
                    const std::size_t src = order[start + i];
                    targets(i, 0) = (*soft_targets)(src, 0);
                    targets(i, 1) = (*soft_targets)(src, 1);
                }
                Var<T> kd = numerics::kd_cross_entropy(logits, std::move(targets),
                                                       static_cast<T>(temperature),
                                                       soften_student, t2_rescale);
                kd_value = static_cast<double>(kd.value().item());
                loss = numerics::add(numerics::scale(ce, static_cast<T>(alpha)),
                                     numerics::scale(kd, static_cast<T>(1.0 - alpha)));
            }

            opt.zero_grad();
            tape.backward(loss);
            numerics::clip_global_norm(params, teacher::kGradClipNorm);
            opt.step();

            const double l = static_cast<double>(loss.value().item());
            loss_sum += l;
            ++n_batches;
            ++step;
            if (log)
                log->steps.push_back({step, static_cast<double>(ce.value().item()), kd_value, l});
        }
        if (log) log->epoch_loss.push_back(loss_sum / static_cast<double>(n_batches));
    }
}

}  // namespace detail

// Cross-entropy-only baseline training.
template <typename T>
StudentModel<T> train_student_plain(const canio::DatasetSplit& dataset,
                                    const StudentConfig& config, std::uint64_t seed,
                                    TrainLog* log = nullptr) {
    config.validate();
    teacher::detail::require_two_classes(dataset.train, "train_student");
    StudentModel<T> model = make_student<T>(config, seed);
    detail::train_core(model, dataset, config, seed, static_cast<const Tensor<T>*>(nullptr), 1.0,
                       1.0, true, false, log);
    return model;
}

}  // namespace lsfidm::student
