#pragma once

// Confusion-matrix accounting and derived detection metrics. Attack is the
// positive class throughout.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsfidm/canio.hpp"
#include "lsfidm/tensor.hpp"

namespace lsfidm::eval {

using canio::Label;

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// A metric whose denominator is zero is undefined, never silently 0.
struct MetricsReport {
    std::optional<double> acc, pre, rec, f1, fpr, fnr;
    ConfusionMatrix cm;
    std::vector<std::pair<std::string, std::string>> undefined;  // metric -> reason
    std::string model_id;
    std::string dataset_id;
    std::uint64_t dataset_hash = 0;
    std::uint64_t seed = 0;
};

// argmax of softmax(logits); ties resolve to Normal so an ambiguous frame
// never raises an alarm.
template <typename T>
Label decide(const T* logits) {
    return logits[1] > logits[0] ? Label::Attack : Label::Normal;
}

// Row-per-example logits -> labels.
template <typename T>
std::vector<Label> detect(const numerics::Tensor<T>& logits) {
    if (logits.cols() != 2) throw std::invalid_argument("detect: expected 2 logits per row");
    std::vector<Label> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) out[i] = decide(logits.row(i));
    return out;
}

inline ConfusionMatrix confusion(std::span<const Label> predictions,
                                 std::span<const Label> labels) {
    if (predictions.size() != labels.size())
        throw std::invalid_argument("confusion: prediction/label count mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool truth = labels[i] == Label::Attack;
        const bool pred = predictions[i] == Label::Attack;
        if (truth && pred) ++cm.tp;
        else if (!truth && !pred) ++cm.tn;
        else if (!truth && pred) ++cm.fp;
        else ++cm.fn;
    }
    return cm;
}

inline MetricsReport metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    MetricsReport r;
    r.cm = cm;
    auto ratio = [&r](const char* name, std::size_t num, std::size_t den,
                      std::optional<double>& out) {
        if (den == 0) {
            out = std::nullopt;
            r.undefined.emplace_back(name, "zero denominator");
        } else {
            out = static_cast<double>(num) / static_cast<double>(den);
        }
    };
    ratio("acc", cm.tp + cm.tn, cm.total(), r.acc);
    ratio("pre", cm.tp, cm.tp + cm.fp, r.pre);
    ratio("rec", cm.tp, cm.tp + cm.fn, r.rec);
    ratio("fpr", cm.fp, cm.tn + cm.fp, r.fpr);
    ratio("fnr", cm.fn, cm.tp + cm.fn, r.fnr);
    if (r.pre && r.rec) {
        if (*r.pre + *r.rec == 0.0) {
            r.f1 = std::nullopt;
            r.undefined.emplace_back("f1", "precision + recall is zero");
        } else {
            r.f1 = 2.0 * *r.pre * *r.rec / (*r.pre + *r.rec);
        }
    } else {
        r.f1 = std::nullopt;
        r.undefined.emplace_back("f1", "precision or recall undefined");
    }
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    nlohmann::json j;
    j["metrics"] = {{"acc", opt(r.acc)}, {"pre", opt(r.pre)}, {"rec", opt(r.rec)},
                    {"f1", opt(r.f1)},   {"fpr", opt(r.fpr)}, {"fnr", opt(r.fnr)}};
    j["confusion"] = {{"tp", r.cm.tp}, {"tn", r.cm.tn}, {"fp", r.cm.fp}, {"fn", r.cm.fn}};
    nlohmann::json und = nlohmann::json::object();
    for (const auto& [k, why] : r.undefined) und[k] = why;
    j["undefined"] = std::move(und);
    j["model_id"] = r.model_id;
    j["dataset_id"] = r.dataset_id;
    j["dataset_hash"] = r.dataset_hash;
    j["seed"] = r.seed;
    return j;
}

inline MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    auto opt = [&](const char* k) -> std::optional<double> {
        const auto& v = j.at("metrics").at(k);
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    r.acc = opt("acc");
    r.pre = opt("pre");
    r.rec = opt("rec");
    r.f1 = opt("f1");
    r.fpr = opt("fpr");
    r.fnr = opt("fnr");
    r.cm.tp = j.at("confusion").at("tp").get<std::size_t>();
    r.cm.tn = j.at("confusion").at("tn").get<std::size_t>();
    r.cm.fp = j.at("confusion").at("fp").get<std::size_t>();
    r.cm.fn = j.at("confusion").at("fn").get<std::size_t>();
    for (const auto& [k, v] : j.at("undefined").items())
        r.undefined.emplace_back(k, v.get<std::string>());
    r.model_id = j.value("model_id", "");
    r.dataset_id = j.value("dataset_id", "");
    r.dataset_hash = j.value("dataset_hash", std::uint64_t{0});
    r.seed = j.value("seed", std::uint64_t{0});
    return r;
}

}  // namespace lsfidm::eval
