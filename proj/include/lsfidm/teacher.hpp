#pragma once

// Transformer-encoder classifier over tokenized CAN frames: the
// context-semantic feature generator whose output distribution supervises
// the lightweight detectors.

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lsfidm/autograd.hpp"
#include "lsfidm/canio.hpp"
#include "lsfidm/optim.hpp"
#include "lsfidm/rng.hpp"

namespace lsfidm::teacher {

using numerics::Param;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kEarlyStopDelta = 1e-4;
inline constexpr double kGradClipNorm = 5.0;

struct TeacherConfig {
    std::size_t layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_length = 16;
    std::size_t vocab_size = canio::kVocabSize;
    std::size_t batch_size = 128;
    double learning_rate = 5e-5;
    std::size_t epochs = 3;
    // Residual form is the nonstandard M = g(E) + f(E + g(E)) composition by
    // default; the conventional post-norm form is available for comparison.
    bool standard_residual = false;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
            throw std::invalid_argument("teacher config: d_model must be divisible by n_heads");
        if (layers == 0 || d_ff == 0 || batch_size == 0 || max_length == 0)
            throw std::invalid_argument("teacher config: zero-sized component");
        if (vocab_size == 0) throw std::invalid_argument("teacher config: empty vocabulary");
        if (learning_rate <= 0.0) throw std::invalid_argument("teacher config: bad learning rate");
    }

    nlohmann::json to_json() const {
        return {{"layers", layers},       {"d_model", d_model},
                {"n_heads", n_heads},     {"d_ff", d_ff},
                {"max_length", max_length}, {"vocab_size", vocab_size},
                {"batch_size", batch_size}, {"learning_rate", learning_rate},
                {"epochs", epochs},       {"standard_residual", standard_residual}};
    }

    static TeacherConfig from_json(const nlohmann::json& j) {
        TeacherConfig c;
        c.layers = j.value("layers", c.layers);
        c.d_model = j.value("d_model", c.d_model);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.d_ff = j.value("d_ff", c.d_ff);
        c.max_length = j.value("max_length", c.max_length);
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.standard_residual = j.value("standard_residual", c.standard_residual);
        return c;
    }
};

// Fixed sinusoidal position table: P[pos, 2k] = sin(pos / 10000^(2k/d)),
// P[pos, 2k+1] = cos of the same argument.
template <typename T>
Tensor<T> positional_encoding(std::size_t max_length, std::size_t d_model) {
    Tensor<T> p(max_length, d_model);
    for (std::size_t pos = 0; pos < max_length; ++pos) {
        for (std::size_t k = 0; 2 * k < d_model; ++k) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(d_model));
            p(pos, 2 * k) = static_cast<T>(std::sin(angle));
            if (2 * k + 1 < d_model) p(pos, 2 * k + 1) = static_cast<T>(std::cos(angle));
        }
    }
    return p;
}

template <typename T>
struct TransformerBlock {
    // Per-head projections live as column blocks of the fused matrices:
    // head h owns columns [h*dh, (h+1)*dh).
    Param<T> wq, wk, wv, wo, bo;
    Param<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Param<T> ff_w1, ff_b1, ff_w2, ff_b2;
};

template <typename T>
class TeacherModel {
public:
    TeacherModel() = default;

    TeacherModel(const TeacherConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng = Rng::fork(seed, 0);
        const std::size_t d = config_.d_model;
        embed_w_ = Param<T>("embed.W", numerics::xavier_uniform<T>(config_.vocab_size, d,
                                                                   config_.vocab_size, d, rng));
        embed_b_ = Param<T>("embed.b", Tensor<T>(1, d));
        pos_ = positional_encoding<T>(config_.max_length, d);
        blocks_.resize(config_.layers);
        for (std::size_t l = 0; l < config_.layers; ++l) {
            auto& b = blocks_[l];
            const std::string pre = "block" + std::to_string(l) + ".";
            b.wq = Param<T>(pre + "attn.Wq", numerics::xavier_uniform<T>(d, d, d, d, rng));
            b.wk = Param<T>(pre + "attn.Wk", numerics::xavier_uniform<T>(d, d, d, d, rng));
            b.wv = Param<T>(pre + "attn.Wv", numerics::xavier_uniform<T>(d, d, d, d, rng));
            b.wo = Param<T>(pre + "attn.Wo", numerics::xavier_uniform<T>(d, d, d, d, rng));
            b.bo = Param<T>(pre + "attn.bo", Tensor<T>(1, d));
            b.ln1_gain = Param<T>(pre + "ln1.gain", Tensor<T>(1, d, T(1)));
            b.ln1_bias = Param<T>(pre + "ln1.bias", Tensor<T>(1, d));
            b.ln2_gain = Param<T>(pre + "ln2.gain", Tensor<T>(1, d, T(1)));
            b.ln2_bias = Param<T>(pre + "ln2.bias", Tensor<T>(1, d));
            b.ff_w1 = Param<T>(pre + "ff.W1",
                               numerics::xavier_uniform<T>(d, config_.d_ff, d, config_.d_ff, rng));
            b.ff_b1 = Param<T>(pre + "ff.b1", Tensor<T>(1, config_.d_ff));
            b.ff_w2 = Param<T>(pre + "ff.W2",
                               numerics::xavier_uniform<T>(config_.d_ff, d, config_.d_ff, d, rng));
            b.ff_b2 = Param<T>(pre + "ff.b2", Tensor<T>(1, d));
        }
        cls_w_ = Param<T>("cls.W", numerics::xavier_uniform<T>(d, 2, d, 2, rng));
        cls_b_ = Param<T>("cls.b", Tensor<T>(1, 2));
    }

    const TeacherConfig& config() const { return config_; }
    const Tensor<T>& positional_table() const { return pos_; }
    Param<T>& embedding_weights() { return embed_w_; }
    Param<T>& embedding_bias() { return embed_b_; }
    std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
    const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

    std::vector<Param<T>*> parameters() {
        std::vector<Param<T>*> ps = {&embed_w_, &embed_b_};
        for (auto& b : blocks_) {
            for (Param<T>* p : {&b.wq, &b.wk, &b.wv, &b.wo, &b.bo, &b.ln1_gain, &b.ln1_bias,
                                &b.ln2_gain, &b.ln2_bias, &b.ff_w1, &b.ff_b1, &b.ff_w2, &b.ff_b2})
                ps.push_back(p);
        }
        ps.push_back(&cls_w_);
        ps.push_back(&cls_b_);
        return ps;
    }

    std::vector<const Param<T>*> parameters() const {
        auto ps = const_cast<TeacherModel*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    // Token embedding plus position table: E = W_e[token] + b_e + P[pos].
    // PAD positions are embedded like any other token and neutralized by the
    // attention mask downstream.
    Var<T> embed(Tape<T>& tape, std::span<const canio::TokenSequence> batch) {
        const std::size_t len = config_.max_length;
        std::vector<std::size_t> ids;
        ids.reserve(batch.size() * len);
        Tensor<T> pos_tile(batch.size() * len, config_.d_model);
        for (std::size_t s = 0; s < batch.size(); ++s) {
            if (batch[s].tokens.size() != len)
                throw std::invalid_argument("embed: sequence length mismatch");
            for (std::size_t i = 0; i < len; ++i) {
                const std::uint16_t tok = batch[s].tokens[i];
                if (tok >= config_.vocab_size)
                    throw std::invalid_argument("embed: token id outside vocabulary");
                ids.push_back(tok);
                std::copy(pos_.row(i), pos_.row(i) + config_.d_model,
                          pos_tile.row(s * len + i));
            }
        }
        Var<T> tok = numerics::gather_rows(tape.param(embed_w_), std::move(ids));
        Var<T> emb = numerics::add(tok, tape.param(embed_b_));
        return numerics::add(emb, tape.constant(std::move(pos_tile)));
    }

    // One encoder layer: M = g(E) + f(E + g(E)); H = z(M) + f(M + z(M)),
    // with g multi-head attention, z the position-wise feed-forward, f the
    // two layer norms. The standard_residual config flag switches to the
    // conventional M = f(E + g(E)); H = f(M + z(M)).
    Var<T> block_forward(Tape<T>& tape, std::size_t layer, Var<T> e,
                         std::shared_ptr<const std::vector<std::uint8_t>> mask) {
        auto& b = blocks_[layer];
        using namespace numerics;
        Var<T> q = matmul(e, tape.param(b.wq));
        Var<T> k = matmul(e, tape.param(b.wk));
        Var<T> v = matmul(e, tape.param(b.wv));
        Var<T> heads = masked_attention(q, k, v, std::move(mask), config_.n_heads,
                                        config_.max_length);
        Var<T> g_e = add(matmul(heads, tape.param(b.wo)), tape.param(b.bo));

        Var<T> ln1 = layer_norm(add(e, g_e), tape.param(b.ln1_gain), tape.param(b.ln1_bias),
                                T(kLayerNormEps));
        Var<T> m = config_.standard_residual ? ln1 : add(g_e, ln1);

        Var<T> hidden = relu(add(matmul(m, tape.param(b.ff_w1)), tape.param(b.ff_b1)));
        Var<T> z_m = add(matmul(hidden, tape.param(b.ff_w2)), tape.param(b.ff_b2));
        Var<T> ln2 = layer_norm(add(m, z_m), tape.param(b.ln2_gain), tape.param(b.ln2_bias),
                                T(kLayerNormEps));
        return config_.standard_residual ? ln2 : add(z_m, ln2);
    }

    // Full forward: embeddings through L blocks, then the affine classifier
    // head on each sequence's CLS position. Returns [batch x 2] logits.
    Var<T> forward(Tape<T>& tape, std::span<const canio::TokenSequence> batch) {
        if (batch.empty()) throw std::invalid_argument("teacher forward: empty batch");
        const std::size_t len = config_.max_length;
        auto mask = std::make_shared<std::vector<std::uint8_t>>();
        mask->reserve(batch.size() * len);
        for (const auto& seq : batch) {
            if (seq.mask.size() != len)
                throw std::invalid_argument("teacher forward: mask length mismatch");
            mask->insert(mask->end(), seq.mask.begin(), seq.mask.end());
        }
        Var<T> h = embed(tape, batch);
        for (std::size_t l = 0; l < config_.layers; ++l)
            h = block_forward(tape, l, h, mask);
        std::vector<std::size_t> cls_rows(batch.size());
        for (std::size_t s = 0; s < batch.size(); ++s) cls_rows[s] = s * len;
        Var<T> cls = numerics::gather_rows(h, std::move(cls_rows));
        return numerics::add(numerics::matmul(cls, tape.param(cls_w_)),
                             tape.param(cls_b_));
    }

    // Inference logits for a full example list; shards across threads when
    // asked (read-only parameters, disjoint output rows).
    Tensor<T> logits_for(std::span<const canio::TokenSequence> sequences,
                         std::size_t batch_size = 256, std::size_t n_threads = 1) {
        Tensor<T> out(sequences.size(), 2);
        auto run_range = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t start = lo; start < hi; start += batch_size) {
                const std::size_t end = std::min(hi, start + batch_size);
                Tape<T> tape;
                Var<T> logits = forward(tape, sequences.subspan(start, end - start));
                const Tensor<T>& lv = logits.value();
                for (std::size_t i = 0; i < lv.rows(); ++i)
                    std::copy(lv.row(i), lv.row(i) + 2, out.row(start + i));
            }
        };
        if (n_threads <= 1 || sequences.size() < 2 * batch_size) {
            run_range(0, sequences.size());
            return out;
        }
        // Shard on batch boundaries so batching (and results) are identical
        // to the single-threaded pass.
        const std::size_t n_batches = (sequences.size() + batch_size - 1) / batch_size;
        const std::size_t per = (n_batches + n_threads - 1) / n_threads;
        std::vector<std::thread> workers;
        for (std::size_t t = 0; t < n_threads; ++t) {
            const std::size_t lo = std::min(sequences.size(), t * per * batch_size);
            const std::size_t hi = std::min(sequences.size(), (t + 1) * per * batch_size);
            if (lo < hi) workers.emplace_back(run_range, lo, hi);
        }
        for (auto& w : workers) w.join();
        return out;
    }

private:
    TeacherConfig config_;
    Param<T> embed_w_, embed_b_;
    Tensor<T> pos_;
    std::vector<TransformerBlock<T>> blocks_;
    Param<T> cls_w_, cls_b_;
};

struct TrainStep {
    std::size_t step = 0;
    double ce = 0.0;
    std::optional<double> kd;
    double loss = 0.0;
};

struct TrainLog {
    std::vector<TrainStep> steps;
    std::vector<double> epoch_loss;  // mean train loss per completed epoch
    bool early_stopped = false;
};

namespace detail {

inline void require_two_classes(std::span<const canio::Example> examples, const char* who) {
    if (examples.empty()) throw std::invalid_argument(std::string(who) + ": empty training set");
    bool has[2] = {false, false};
    for (const auto& ex : examples) has[static_cast<std::size_t>(ex.label)] = true;
    if (!has[0] || !has[1])
        throw std::invalid_argument(std::string(who) + ": training set has a single class");
}

}  // namespace detail

// Supervised cross-entropy training with Adam; per-epoch mean loss is logged
// and an epoch improvement below 1e-4 stops early.
template <typename T>
TeacherModel<T> train_teacher(const canio::DatasetSplit& dataset, const TeacherConfig& config,
                              std::uint64_t seed, TrainLog* log = nullptr) {
    config.validate();
    detail::require_two_classes(dataset.train, "train_teacher");
    TeacherModel<T> model(config, seed);
    if (config.epochs == 0) return model;

    auto params = model.parameters();
    numerics::Adam<T> opt(params, {.learning_rate = config.learning_rate});
    Rng shuffle_rng = Rng::fork(seed, 1);

    std::vector<std::size_t> order(dataset.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<canio::TokenSequence> batch_tokens;
    std::vector<int> batch_labels;
    double prev_epoch_loss = 0.0;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        lsfidm::shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            batch_tokens.clear();
            batch_labels.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch_tokens.push_back(dataset.train[order[i]].tokens);
                batch_labels.push_back(static_cast<int>(dataset.train[order[i]].label));
            }
            Tape<T> tape;
            Var<T> logits = model.forward(tape, batch_tokens);
            Var<T> loss = numerics::cross_entropy_logits(logits, batch_labels);
            opt.zero_grad();
            tape.backward(loss);
            numerics::clip_global_norm(params, kGradClipNorm);
            opt.step();

            const double l = static_cast<double>(loss.value().item());
            loss_sum += l;
            ++n_batches;
            ++step;
            if (log) log->steps.push_back({step, l, std::nullopt, l});
        }
        const double epoch_loss = loss_sum / static_cast<double>(n_batches);
        if (log) log->epoch_loss.push_back(epoch_loss);
        if (epoch > 0 && prev_epoch_loss - epoch_loss < kEarlyStopDelta) {
            if (log) log->early_stopped = true;
            break;
        }
        prev_epoch_loss = epoch_loss;
    }
    return model;
}

}  // namespace lsfidm::teacher
