#pragma once

// Reverse-mode automatic differentiation on a per-batch tape. Ops append
// nodes in construction order, so the reversed tape is already a valid
// topological order. Gradients accumulate (+=) across fan-out. Parameters
// live outside the tape and are bound per batch; after backward() their leaf
// gradients are folded into Param::grad.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lsfidm/tensor.hpp"

namespace lsfidm::numerics {

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    Param(std::string n, Tensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

template <typename T>
class Var {
public:
    Var() = default;
    Tape<T>* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    const Tensor<T>& value() const;

private:
    friend class Tape<T>;
    Var(Tape<T>* t, std::size_t id) : tape_(t), id_(id) {}
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }
    Var<T> leaf(Tensor<T> v) { return push(std::move(v), true, nullptr); }
    Var<T> param(Param<T>& p) { return push(Tensor<T>(p.value), true, &p); }

    Var<T> make(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
        bool any = false;
        for (const Var<T>& p : parents) {
            if (p.tape() != this) throw std::invalid_argument("var belongs to another tape");
            any = any || nodes_[p.id()].requires_grad;
        }
        Var<T> out = push(std::move(value), any, nullptr);
        if (any) nodes_[out.id()].backward = std::move(fn);
        return out;
    }

    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    const Tensor<T>& value(Var<T> v) const { return nodes_[v.id()].value; }
    bool needs(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient buffer, allocated to zeros on first touch.
    Tensor<T>& grad_buf(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    // Gradient of a node after backward(); zeros if the node was off-path.
    const Tensor<T>& grad(Var<T> v) { return grad_buf(v.id()); }

    // Accumulate g into a parent's gradient unless the parent is a constant.
    void accumulate(std::size_t id, const Tensor<T>& g) {
        if (!nodes_[id].requires_grad) return;
        Tensor<T>& dst = grad_buf(id);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    }

    void backward(Var<T> loss) {
        if (nodes_[loss.id()].value.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        grad_buf(loss.id())[0] = T(1);
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, i);
        }
        for (Node& n : nodes_) {
            if (n.bound && n.grad.size() != 0)
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Param<T>* bound = nullptr;
        BackwardFn backward;
    };

    Var<T> push(Tensor<T> v, bool requires_g, Param<T>* bound) {
        Node n;
        n.value = std::move(v);
        n.requires_grad = requires_g;
        n.bound = bound;
        nodes_.push_back(std::move(n));
        return Var<T>(this, nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape_->value(id_);
}

namespace detail {

template <typename T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b) {
    if (a.tape() != b.tape()) throw std::invalid_argument("vars belong to different tapes");
    return *a.tape();
}

template <typename T>
Tensor<T> colsum(const Tensor<T>& g) {
    Tensor<T> out(1, g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) out(0, j) += g(i, j);
    return out;
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    Tensor<T> out = matmul(t.value(a), t.value(b));
    const std::size_t ai = a.id(), bi = b.id();
    return t.make(std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        if (t.needs(ai)) kernels::matmul_nt_acc(gout, t.value(bi), t.grad_buf(ai));
        if (t.needs(bi)) kernels::matmul_tn_acc(t.value(ai), gout, t.grad_buf(bi));
    });
}

// add / sub accept equal shapes or a broadcast [1 x n] right operand.
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    Tensor<T> out = add(t.value(a), t.value(b));
    const std::size_t ai = a.id(), bi = b.id();
    const bool bcast = t.value(b).rows() == 1 && t.value(a).rows() != 1;
    return t.make(std::move(out), {a, b}, [ai, bi, bcast](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        t.accumulate(ai, gout);
        if (!t.needs(bi)) return;
        t.accumulate(bi, bcast ? detail::colsum(gout) : gout);
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    Tensor<T> out = sub(t.value(a), t.value(b));
    const std::size_t ai = a.id(), bi = b.id();
    const bool bcast = t.value(b).rows() == 1 && t.value(a).rows() != 1;
    return t.make(std::move(out), {a, b}, [ai, bi, bcast](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        t.accumulate(ai, gout);
        if (!t.needs(bi)) return;
        Tensor<T> g = bcast ? detail::colsum(gout) : gout;
        t.accumulate(bi, scale(g, T(-1)));
    });
}

// Elementwise product; right operand may broadcast as a [1 x n] row.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& t = detail::same_tape(a, b);
    Tensor<T> out = mul(t.value(a), t.value(b));
    const std::size_t ai = a.id(), bi = b.id();
    const bool bcast = t.value(b).rows() == 1 && t.value(a).rows() != 1;
    return t.make(std::move(out), {a, b}, [ai, bi, bcast](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        const Tensor<T>& av = t.value(ai);
        const Tensor<T>& bv = t.value(bi);
        if (t.needs(ai)) t.accumulate(ai, mul(gout, bv));
        if (t.needs(bi)) {
            Tensor<T> g = mul(gout, av);
            t.accumulate(bi, bcast ? detail::colsum(g) : g);
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tape<T>& t = *a.tape();
    Tensor<T> out = scale(t.value(a), s);
    const std::size_t ai = a.id();
    return t.make(std::move(out), {a}, [ai, s](Tape<T>& t, std::size_t self) {
        t.accumulate(ai, scale(t.grad_buf(self), s));
    });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

template <typename T>
Var<T> concat(Var<T> a, Var<T> b, int axis) {
    Tape<T>& t = detail::same_tape(a, b);
    Tensor<T> out = concat(t.value(a), t.value(b), axis);
    const std::size_t ai = a.id(), bi = b.id();
    const std::size_t ar = t.value(a).rows(), ac = t.value(a).cols();
    return t.make(std::move(out), {a, b}, [ai, bi, ar, ac, axis](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        if (t.needs(ai)) {
            Tensor<T>& ga = t.grad_buf(ai);
            for (std::size_t i = 0; i < ga.rows(); ++i)
                for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += gout(i, j);
        }
        if (t.needs(bi)) {
            Tensor<T>& gb = t.grad_buf(bi);
            const std::size_t r0 = axis == 0 ? ar : 0;
            const std::size_t c0 = axis == 1 ? ac : 0;
            for (std::size_t i = 0; i < gb.rows(); ++i)
                for (std::size_t j = 0; j < gb.cols(); ++j) gb(i, j) += gout(i + r0, j + c0);
        }
    });
}

// Columns [c0, c1) of a.
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t c0, std::size_t c1) {
    Tape<T>& t = *a.tape();
    const Tensor<T>& av = t.value(a);
    if (c0 >= c1 || c1 > av.cols()) throw std::invalid_argument("slice_cols: bad range");
    Tensor<T> out(av.rows(), c1 - c0);
    for (std::size_t i = 0; i < av.rows(); ++i)
        std::copy(av.row(i) + c0, av.row(i) + c1, out.row(i));
    const std::size_t ai = a.id();
    return t.make(std::move(out), {a}, [ai, c0](Tape<T>& t, std::size_t self) {
        if (!t.needs(ai)) return;
        const Tensor<T>& gout = t.grad_buf(self);
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < gout.rows(); ++i)
            for (std::size_t j = 0; j < gout.cols(); ++j) ga(i, j + c0) += gout(i, j);
    });
}

// out[i, :] = a[idx[i], :]; the backward pass scatter-adds. Used for both
// embedding lookup and CLS-position extraction.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> idx) {
    Tape<T>& t = *a.tape();
    const Tensor<T>& av = t.value(a);
    Tensor<T> out(idx.size(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= av.rows()) throw std::invalid_argument("gather_rows: index out of range");
        std::copy(av.row(idx[i]), av.row(idx[i]) + av.cols(), out.row(i));
    }
    const std::size_t ai = a.id();
    auto indices = std::make_shared<std::vector<std::size_t>>(std::move(idx));
    return t.make(std::move(out), {a}, [ai, indices](Tape<T>& t, std::size_t self) {
        if (!t.needs(ai)) return;
        const Tensor<T>& gout = t.grad_buf(self);
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < indices->size(); ++i) {
            T* dst = ga.row((*indices)[i]);
            const T* src = gout.row(i);
            for (std::size_t j = 0; j < gout.cols(); ++j) dst[j] += src[j];
        }
    });
}

// Sum of all entries as a 1x1 scalar.
template <typename T>
Var<T> sum_all(Var<T> a) {
    Tape<T>& t = *a.tape();
    const Tensor<T>& av = t.value(a);
    T s{};
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    const std::size_t ai = a.id();
    return t.make(Tensor<T>::scalar(s), {a}, [ai](Tape<T>& t, std::size_t self) {
        const T g = t.grad_buf(self)[0];
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    Tape<T>& t = *a.tape();
    Tensor<T> out = sigmoid(t.value(a));
    const std::size_t ai = a.id();
    return t.make(std::move(out), {a}, [ai](Tape<T>& t, std::size_t self) {
        const Tensor<T>& y = t.value(self);
        const Tensor<T>& gout = t.grad_buf(self);
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < y.size(); ++i) ga[i] += gout[i] * y[i] * (T(1) - y[i]);
    });
}

template <typename T>
Var<T> tanh(Var<T> a) {
    Tape<T>& t = *a.tape();
    Tensor<T> out = tanh(t.value(a));
    const std::size_t ai = a.id();
    return t.make(std::move(out), {a}, [ai](Tape<T>& t, std::size_t self) {
        const Tensor<T>& y = t.value(self);
        const Tensor<T>& gout = t.grad_buf(self);
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < y.size(); ++i) ga[i] += gout[i] * (T(1) - y[i] * y[i]);
    });
}

template <typename T>
Var<T> relu(Var<T> a) {
    Tape<T>& t = *a.tape();
    Tensor<T> out = relu(t.value(a));
    const std::size_t ai = a.id();
    return t.make(std::move(out), {a}, [ai](Tape<T>& t, std::size_t self) {
        const Tensor<T>& x = t.value(ai);
        const Tensor<T>& gout = t.grad_buf(self);
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += x[i] > T(0) ? gout[i] : T(0);
    });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
    Tape<T>& t = *a.tape();
    Tensor<T> out = softmax_rows(t.value(a));
    const std::size_t ai = a.id();
    return t.make(std::move(out), {a}, [ai](Tape<T>& t, std::size_t self) {
        const Tensor<T>& y = t.value(self);
        const Tensor<T>& gout = t.grad_buf(self);
        Tensor<T>& ga = t.grad_buf(ai);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            T dot{};
            for (std::size_t j = 0; j < y.cols(); ++j) dot += gout(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j)
                ga(i, j) += y(i, j) * (gout(i, j) - dot);
        }
    });
}

// Per-row normalization to zero mean / unit variance, then affine gain+bias.
// gain and bias are [1 x n] rows.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    Tape<T>& t = *x.tape();
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& gv = t.value(gain);
    const Tensor<T>& bv = t.value(bias);
    const std::size_t n = xv.cols();
    if (gv.rows() != 1 || gv.cols() != n || bv.rows() != 1 || bv.cols() != n)
        throw std::invalid_argument("layer_norm: gain/bias must be [1 x n]");

    Tensor<T> xhat(xv.rows(), n);
    Tensor<T> inv_std(xv.rows(), 1);
    Tensor<T> out(xv.rows(), n);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        T mean{};
        for (std::size_t j = 0; j < n; ++j) mean += xv(i, j);
        mean /= static_cast<T>(n);
        T var{};
        for (std::size_t j = 0; j < n; ++j) {
            T d = xv(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        T inv = T(1) / std::sqrt(var + eps);
        inv_std(i, 0) = inv;
        for (std::size_t j = 0; j < n; ++j) {
            xhat(i, j) = (xv(i, j) - mean) * inv;
            out(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
        }
    }

    const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
    auto saved = std::make_shared<std::pair<Tensor<T>, Tensor<T>>>(std::move(xhat),
                                                                   std::move(inv_std));
    return t.make(std::move(out), {x, gain, bias},
                  [xi, gi, bi, saved, n](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        const Tensor<T>& xh = saved->first;
        const Tensor<T>& inv = saved->second;
        const Tensor<T>& gv = t.value(gi);
        if (t.needs(gi)) {
            Tensor<T>& gg = t.grad_buf(gi);
            for (std::size_t i = 0; i < xh.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j) gg(0, j) += gout(i, j) * xh(i, j);
        }
        if (t.needs(bi)) {
            Tensor<T>& gb = t.grad_buf(bi);
            for (std::size_t i = 0; i < xh.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j) gb(0, j) += gout(i, j);
        }
        if (t.needs(xi)) {
            Tensor<T>& gx = t.grad_buf(xi);
            for (std::size_t i = 0; i < xh.rows(); ++i) {
                T mean_dxh{};
                T mean_dxh_xh{};
                for (std::size_t j = 0; j < n; ++j) {
                    T dxh = gout(i, j) * gv(0, j);
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh(i, j);
                }
                mean_dxh /= static_cast<T>(n);
                mean_dxh_xh /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    T dxh = gout(i, j) * gv(0, j);
                    gx(i, j) += inv(i, 0) * (dxh - mean_dxh - xh(i, j) * mean_dxh_xh);
                }
            }
        }
    });
}

inline constexpr double kMaskPenalty = -1e9;

// Fused scaled dot-product self-attention over all samples and heads.
// q, k, v are [batch*seq_len x d_model]; head h uses the column block
// [h*dh, (h+1)*dh). mask has batch*seq_len entries, nonzero at real tokens;
// masked keys get an additive -1e9 penalty before the row softmax.
template <typename T>
Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v,
                        std::shared_ptr<const std::vector<std::uint8_t>> mask,
                        std::size_t n_heads, std::size_t seq_len) {
    Tape<T>& t = *q.tape();
    const Tensor<T>& qv = t.value(q);
    const std::size_t d_model = qv.cols();
    if (d_model % n_heads != 0)
        throw std::invalid_argument("masked_attention: d_model not divisible by heads");
    if (qv.rows() % seq_len != 0)
        throw std::invalid_argument("masked_attention: rows not a multiple of seq_len");
    const std::size_t batch = qv.rows() / seq_len;
    if (mask && mask->size() != batch * seq_len)
        throw std::invalid_argument("masked_attention: mask length mismatch");
    const std::size_t dh = d_model / n_heads;
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(dh));

    const Tensor<T>& kv = t.value(k);
    const Tensor<T>& vv = t.value(v);
    Tensor<T> out(qv.rows(), d_model);
    // Attention weights per (sample, head), kept for the backward pass.
    auto weights = std::make_shared<std::vector<Tensor<T>>>();
    weights->reserve(batch * n_heads);

    Tensor<T> scores(seq_len, seq_len);
    for (std::size_t s = 0; s < batch; ++s) {
        const std::size_t r0 = s * seq_len;
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < seq_len; ++i) {
                const T* qrow = qv.row(r0 + i) + c0;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    const T* krow = kv.row(r0 + j) + c0;
                    T acc{};
                    for (std::size_t p = 0; p < dh; ++p) acc += qrow[p] * krow[p];
                    acc *= inv_sqrt_d;
                    if (mask && !(*mask)[r0 + j]) acc += T(kMaskPenalty);
                    scores(i, j) = acc;
                }
            }
            Tensor<T> attn = softmax_rows(scores);
            for (std::size_t i = 0; i < seq_len; ++i) {
                T* orow = out.row(r0 + i) + c0;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    const T a = attn(i, j);
                    const T* vrow = vv.row(r0 + j) + c0;
                    for (std::size_t p = 0; p < dh; ++p) orow[p] += a * vrow[p];
                }
            }
            weights->push_back(std::move(attn));
        }
    }

    const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
    return t.make(std::move(out), {q, k, v},
                  [qi, ki, vi, weights, n_heads, seq_len, dh, batch, inv_sqrt_d](
                      Tape<T>& t, std::size_t self) {
        const Tensor<T>& gout = t.grad_buf(self);
        const Tensor<T>& qv = t.value(qi);
        const Tensor<T>& kv = t.value(ki);
        const Tensor<T>& vv = t.value(vi);
        Tensor<T>& gq = t.grad_buf(qi);
        Tensor<T>& gk = t.grad_buf(ki);
        Tensor<T>& gv = t.grad_buf(vi);

        Tensor<T> dattn(seq_len, seq_len);
        Tensor<T> dscore(seq_len, seq_len);
        for (std::size_t s = 0; s < batch; ++s) {
            const std::size_t r0 = s * seq_len;
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t c0 = h * dh;
                const Tensor<T>& attn = (*weights)[s * n_heads + h];

                // dV += A^T dO;  dA = dO V^T
                for (std::size_t i = 0; i < seq_len; ++i) {
                    const T* grow = gout.row(r0 + i) + c0;
                    for (std::size_t j = 0; j < seq_len; ++j) {
                        const T a = attn(i, j);
                        T* gvrow = gv.row(r0 + j) + c0;
                        const T* vrow = vv.row(r0 + j) + c0;
                        T dot{};
                        for (std::size_t p = 0; p < dh; ++p) {
                            gvrow[p] += a * grow[p];
                            dot += grow[p] * vrow[p];
                        }
                        dattn(i, j) = dot;
                    }
                }
                // softmax backward per row, then undo the 1/sqrt(d) scaling
                for (std::size_t i = 0; i < seq_len; ++i) {
                    T dot{};
                    for (std::size_t j = 0; j < seq_len; ++j) dot += dattn(i, j) * attn(i, j);
                    for (std::size_t j = 0; j < seq_len; ++j)
                        dscore(i, j) = attn(i, j) * (dattn(i, j) - dot) * inv_sqrt_d;
                }
                // dQ += dS K;  dK += dS^T Q
                for (std::size_t i = 0; i < seq_len; ++i) {
                    T* gqrow = gq.row(r0 + i) + c0;
                    const T* qrow = qv.row(r0 + i) + c0;
                    for (std::size_t j = 0; j < seq_len; ++j) {
                        const T ds = dscore(i, j);
                        const T* krow = kv.row(r0 + j) + c0;
                        T* gkrow = gk.row(r0 + j) + c0;
                        for (std::size_t p = 0; p < dh; ++p) {
                            gqrow[p] += ds * krow[p];
                            gkrow[p] += ds * qrow[p];
                        }
                    }
                }
            }
        }
    });
}

// Mean over the batch of -log softmax(logits)[label], computed in
// log-sum-exp form.
template <typename T>
Var<T> cross_entropy_logits(Var<T> logits, std::vector<int> labels) {
    Tape<T>& t = *logits.tape();
    const Tensor<T>& z = t.value(logits);
    if (z.rows() == 0) throw std::invalid_argument("cross_entropy_logits: empty batch");
    if (z.cols() < 2) throw std::invalid_argument("cross_entropy_logits: need >= 2 classes");
    if (labels.size() != z.rows())
        throw std::invalid_argument("cross_entropy_logits: label count mismatch");

    Tensor<T> probs(z.rows(), z.cols());
    T loss{};
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const T* row = z.row(i);
        T mx = row[0];
        for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, row[j]);
        T sum{};
        for (std::size_t j = 0; j < z.cols(); ++j) {
            probs(i, j) = std::exp(row[j] - mx);
            sum += probs(i, j);
        }
        for (std::size_t j = 0; j < z.cols(); ++j) probs(i, j) /= sum;
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
            throw std::invalid_argument("cross_entropy_logits: label out of range");
        loss -= (row[static_cast<std::size_t>(y)] - mx) - std::log(sum);
    }
    loss /= static_cast<T>(z.rows());

    const std::size_t zi = logits.id();
    auto saved = std::make_shared<std::pair<Tensor<T>, std::vector<int>>>(std::move(probs),
                                                                          std::move(labels));
    return t.make(Tensor<T>::scalar(loss), {logits}, [zi, saved](Tape<T>& t, std::size_t self) {
        const T gl = t.grad_buf(self)[0];
        const Tensor<T>& p = saved->first;
        const T invb = T(1) / static_cast<T>(p.rows());
        Tensor<T>& gz = t.grad_buf(zi);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            for (std::size_t j = 0; j < p.cols(); ++j) {
                T g = p(i, j);
                if (static_cast<std::size_t>(saved->second[i]) == j) g -= T(1);
                gz(i, j) += gl * g * invb;
            }
        }
    });
}

// Distillation cross-entropy: -(1/K) sum_i sum_c target[i,c] * log q[i,c]
// where q = softmax(student_logits / T_s). T_s is the distillation
// temperature, or 1 when the student side is left unsoftened. Optionally
// rescaled by T^2 for gradient-magnitude parity.
template <typename T>
Var<T> kd_cross_entropy(Var<T> student_logits, Tensor<T> teacher_probs, T temperature,
                        bool soften_student = true, bool t2_rescale = false) {
    Tape<T>& t = *student_logits.tape();
    const Tensor<T>& z = t.value(student_logits);
    if (z.rows() == 0) throw std::invalid_argument("kd_cross_entropy: empty batch");
    if (!z.same_shape(teacher_probs))
        throw std::invalid_argument("kd_cross_entropy: target shape mismatch");
    if (!(temperature > T(0))) throw std::invalid_argument("kd_cross_entropy: T must be > 0");

    const T ts = soften_student ? temperature : T(1);
    const T factor = t2_rescale ? temperature * temperature : T(1);

    Tensor<T> q(z.rows(), z.cols());
    T loss{};
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const T* row = z.row(i);
        T mx = row[0] / ts;
        for (std::size_t j = 1; j < z.cols(); ++j) mx = std::max(mx, row[j] / ts);
        T sum{};
        for (std::size_t j = 0; j < z.cols(); ++j) {
            q(i, j) = std::exp(row[j] / ts - mx);
            sum += q(i, j);
        }
        const T logsum = std::log(sum);
        for (std::size_t j = 0; j < z.cols(); ++j) {
            loss -= teacher_probs(i, j) * ((row[j] / ts - mx) - logsum);
            q(i, j) /= sum;
        }
    }
    loss = loss * factor / static_cast<T>(z.rows());

    const std::size_t zi = student_logits.id();
    auto saved = std::make_shared<std::pair<Tensor<T>, Tensor<T>>>(std::move(q),
                                                                   std::move(teacher_probs));
    return t.make(Tensor<T>::scalar(loss), {student_logits},
                  [zi, saved, ts, factor](Tape<T>& t, std::size_t self) {
        const T gl = t.grad_buf(self)[0];
        const Tensor<T>& q = saved->first;
        const Tensor<T>& p = saved->second;
        const T c = gl * factor / (static_cast<T>(q.rows()) * ts);
        Tensor<T>& gz = t.grad_buf(zi);
        for (std::size_t i = 0; i < q.size(); ++i) gz[i] += c * (q[i] - p[i]);
    });
}

}  // namespace lsfidm::numerics
