#pragma once

// Test-only oracles. Everything here is written as straight-line scalar code,
// independent of the library's tensor/autograd paths, so the two can check
// each other.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "lsfidm/autograd.hpp"
#include "lsfidm/rng.hpp"
#include "lsfidm/tensor.hpp"

namespace oracles {

using lsfidm::numerics::Tensor;

inline Tensor<double> random_tensor(std::size_t rows, std::size_t cols, lsfidm::Rng& rng,
                                    double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Naive triple loop, deliberately in a different loop order than the library
// kernel.
template <typename T>
Tensor<T> matmul_naive(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            T acc{};
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    return c;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

// Central finite-difference check. `build` maps leaf Vars (one per input)
// to a scalar loss Var on the given tape. Returns the worst relative error
// between analytic gradients and central differences over all input entries.
inline double finite_difference_check(
    std::vector<Tensor<double>> inputs,
    const std::function<lsfidm::numerics::Var<double>(
        lsfidm::numerics::Tape<double>&, std::vector<lsfidm::numerics::Var<double>>&)>& build,
    double h = 1e-6) {
    using lsfidm::numerics::Tape;
    using lsfidm::numerics::Var;

    auto eval = [&](const std::vector<Tensor<double>>& xs) {
        Tape<double> tape;
        std::vector<Var<double>> leaves;
        leaves.reserve(xs.size());
        for (const auto& x : xs) leaves.push_back(tape.constant(x));
        return build(tape, leaves).value().item();
    };

    // Analytic gradients.
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
    Var<double> loss = build(tape, leaves);
    tape.backward(loss);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor<double>& analytic = tape.grad(leaves[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double keep = inputs[k][i];
            inputs[k][i] = keep + h;
            const double up = eval(inputs);
            inputs[k][i] = keep - h;
            const double down = eval(inputs);
            inputs[k][i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

// Finite-difference check in parameter space: `loss` must run a fresh
// forward pass from current parameter values, `grads` holds the analytic
// gradients (Param::grad after one backward). Samples up to `samples`
// entries per parameter. Returns the worst relative error.
inline double param_finite_difference_check(
    const std::vector<lsfidm::numerics::Param<double>*>& params,
    const std::function<double()>& loss, std::size_t samples = 1000, double h = 1e-6) {
    lsfidm::Rng pick(12345);
    double worst = 0.0;
    for (auto* p : params) {
        const std::size_t n = p->value.size();
        for (std::size_t s = 0; s < std::min(samples, n); ++s) {
            const std::size_t i = n <= samples ? s : pick.below(n);
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = loss();
            p->value[i] = keep - h;
            const double down = loss();
            p->value[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double a = p->grad[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1.0});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

// Regularized incomplete gamma Q(a, x), series + continued fraction.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        // P(a,x) by series, return 1 - P.
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-14) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
    }
    // Q(a,x) by continued fraction (Lentz).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-14) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

// Chi-square goodness-of-fit p-value against a uniform expectation.
inline double chi_square_uniform_p(const std::vector<std::size_t>& counts, double expected) {
    double stat = 0.0;
    for (std::size_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return gamma_q(static_cast<double>(counts.size() - 1) / 2.0, stat / 2.0);
}

// Scalar-by-scalar LSTM cell update for one example: gates over [h, x].
struct ScalarLstmOut {
    std::vector<double> h, c;
};

inline ScalarLstmOut lstm_step_scalar(const std::vector<std::vector<double>>& wi,
                                      const std::vector<std::vector<double>>& wo,
                                      const std::vector<std::vector<double>>& wf,
                                      const std::vector<std::vector<double>>& wc,
                                      const std::vector<double>& bi, const std::vector<double>& bo,
                                      const std::vector<double>& bf, const std::vector<double>& bc,
                                      const std::vector<double>& h_prev,
                                      const std::vector<double>& c_prev,
                                      const std::vector<double>& x) {
    const std::size_t hidden = h_prev.size();
    std::vector<double> z = h_prev;
    z.insert(z.end(), x.begin(), x.end());
    auto gate = [&](const std::vector<std::vector<double>>& w, const std::vector<double>& b,
                    std::size_t j) {
        double acc = b[j];
        for (std::size_t k = 0; k < z.size(); ++k) acc += z[k] * w[k][j];
        return acc;
    };
    ScalarLstmOut out;
    out.h.resize(hidden);
    out.c.resize(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
        const double i_g = 1.0 / (1.0 + std::exp(-gate(wi, bi, j)));
        const double o_g = 1.0 / (1.0 + std::exp(-gate(wo, bo, j)));
        const double f_g = 1.0 / (1.0 + std::exp(-gate(wf, bf, j)));
        const double c_cand = std::tanh(gate(wc, bc, j));
        out.c[j] = f_g * c_prev[j] + i_g * c_cand;
        out.h[j] = o_g * std::tanh(out.c[j]);
    }
    return out;
}

// Direct three-loop softmax(Q K^T / sqrt(d)) V for a single head, row-major
// flat matrices [n x d].
inline std::vector<double> attention_scalar(const std::vector<double>& q,
                                            const std::vector<double>& k,
                                            const std::vector<double>& v, std::size_t n,
                                            std::size_t d,
                                            const std::vector<bool>* key_mask = nullptr) {
    std::vector<double> out(n * d, 0.0);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < d; ++p) acc += q[i * d + p] * k[j * d + p];
            row[j] = acc / std::sqrt(static_cast<double>(d));
            if (key_mask && !(*key_mask)[j]) row[j] += -1e9;
        }
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < d; ++p) out[i * d + p] += row[j] * v[j * d + p];
    }
    return out;
}

}  // namespace oracles
