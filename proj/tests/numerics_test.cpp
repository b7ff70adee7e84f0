#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lsfidm/autograd.hpp"
#include "lsfidm/optim.hpp"
#include "lsfidm/tensor.hpp"
#include "support/oracles.hpp"

using namespace lsfidm;
using numerics::Param;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

TEST_CASE("tensor shape bookkeeping") {
    Tensor<double> t(2, 3, 1.5);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.size() == 6);
    CHECK(t(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor<double>::from(2, 2, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(t.item(), std::invalid_argument);
}

TEST_CASE("matmul identity and hand arithmetic") {
    auto eye = Tensor<double>::from(2, 2, {1, 0, 0, 1});
    auto a = Tensor<double>::from(2, 2, {1, 2, 3, 4});
    CHECK(numerics::matmul(eye, a) == a);

    auto b = Tensor<double>::from(2, 1, {5, 6});
    auto c = numerics::matmul(a, b);
    CHECK(c(0, 0) == 17.0);
    CHECK(c(1, 0) == 39.0);

    CHECK_THROWS_AS(numerics::matmul(a, Tensor<double>(3, 2)), std::invalid_argument);
}

TEST_CASE("matmul matches a naive triple-loop oracle") {
    Rng rng(17);
    auto a = oracles::random_tensor(7, 3, rng);
    auto b = oracles::random_tensor(3, 5, rng);
    CHECK(oracles::max_abs_diff(numerics::matmul(a, b), oracles::matmul_naive(a, b)) < 1e-12);
}

TEST_CASE("transposed kernels match explicit transpose") {
    Rng rng(18);
    auto a = oracles::random_tensor(4, 6, rng);
    auto b = oracles::random_tensor(5, 6, rng);
    Tensor<double> nt(4, 5);
    numerics::kernels::matmul_nt_acc(a, b, nt);
    CHECK(oracles::max_abs_diff(nt, oracles::matmul_naive(a, numerics::transpose(b))) < 1e-12);

    auto c = oracles::random_tensor(6, 4, rng);
    auto d = oracles::random_tensor(6, 5, rng);
    Tensor<double> tn(4, 5);
    numerics::kernels::matmul_tn_acc(c, d, tn);
    CHECK(oracles::max_abs_diff(tn, oracles::matmul_naive(numerics::transpose(c), d)) < 1e-12);
}

TEST_CASE("activation point values") {
    auto x = Tensor<double>::from(1, 3, {0.0, 0.0, -3.0});
    CHECK(numerics::sigmoid(x)[0] == 0.5);
    CHECK(numerics::tanh(x)[1] == 0.0);
    CHECK(numerics::relu(x)[2] == 0.0);

    auto sm = numerics::softmax_rows(Tensor<double>::from(1, 2, {2.0, 0.0}));
    CHECK(sm[0] == Catch::Approx(0.8808).margin(5e-5));
    CHECK(sm[1] == Catch::Approx(0.1192).margin(5e-5));

    auto big = numerics::softmax_rows(Tensor<double>::from(1, 2, {1000.0, 1000.0}));
    CHECK(big[0] == 0.5);
    CHECK(big[1] == 0.5);
}

TEST_CASE("softmax rows form a probability simplex") {
    Rng rng(23);
    auto x = oracles::random_tensor(20, 7, rng, -30.0, 30.0);
    auto y = numerics::softmax_rows(x);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) {
            CHECK(y(i, j) >= 0.0);
            sum += y(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

namespace {

// layer_norm on raw tensors via a throwaway tape.
Tensor<double> layer_norm_values(const Tensor<double>& x, double eps = 0.0) {
    Tape<double> tape;
    auto gain = tape.constant(Tensor<double>(1, x.cols(), 1.0));
    auto bias = tape.constant(Tensor<double>(1, x.cols(), 0.0));
    return numerics::layer_norm(tape.constant(x), gain, bias, eps).value();
}

}  // namespace

TEST_CASE("layer_norm point values and statistics") {
    auto constant_row = layer_norm_values(Tensor<double>::from(1, 4, {3, 3, 3, 3}), 1e-12);
    for (std::size_t j = 0; j < 4; ++j) CHECK(constant_row[j] == Catch::Approx(0.0).margin(1e-9));

    auto r = layer_norm_values(Tensor<double>::from(1, 3, {1, 2, 3}));
    CHECK(r[0] == Catch::Approx(-1.224745).margin(1e-5));
    CHECK(r[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(r[2] == Catch::Approx(1.224745).margin(1e-5));

    Rng rng(31);
    auto x = oracles::random_tensor(10, 16, rng, -4.0, 9.0);
    auto y = layer_norm_values(x, 1e-12);
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) mean += y(i, j);
        mean /= static_cast<double>(y.cols());
        for (std::size_t j = 0; j < y.cols(); ++j)
            var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= static_cast<double>(y.cols());
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == Catch::Approx(1.0).epsilon(1e-6));
    }

    // Idempotence up to affine: normalizing a normalized row barely moves it.
    auto z = layer_norm_values(y, 1e-18);
    CHECK(oracles::max_abs_diff(y, z) < 1e-9);
}

TEST_CASE("cross entropy point values and oracle") {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>::from(1, 2, {0.0, 0.0}));
    CHECK(numerics::cross_entropy_logits(logits, {0}).value().item() ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));

    auto confident = tape.constant(Tensor<double>::from(1, 2, {40.0, -40.0}));
    CHECK(numerics::cross_entropy_logits(confident, {0}).value().item() < 1e-12);

    // Random batch against the direct -sum y log yhat formula.
    Rng rng(37);
    auto z = oracles::random_tensor(16, 2, rng, -3.0, 3.0);
    std::vector<int> labels(16);
    for (auto& l : labels) l = static_cast<int>(rng.below(2));
    double expected = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        const double e0 = std::exp(z(i, 0)), e1 = std::exp(z(i, 1));
        const double p = (labels[i] == 0 ? e0 : e1) / (e0 + e1);
        expected -= std::log(p);
    }
    expected /= 16.0;
    auto zc = tape.constant(z);
    CHECK(numerics::cross_entropy_logits(zc, labels).value().item() ==
          Catch::Approx(expected).margin(1e-10));

    std::vector<int> empty_labels;
    auto zero_rows = tape.constant(Tensor<double>(0, 2));
    CHECK_THROWS_AS(numerics::cross_entropy_logits(zero_rows, empty_labels),
                    std::invalid_argument);
}

TEST_CASE("backward: square, fan-out, and accumulation") {
    Tape<double> tape;
    auto x = tape.leaf(Tensor<double>::scalar(3.0));
    auto y = numerics::mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x)[0] == 6.0);

    Tape<double> tape2;
    auto x2 = tape2.leaf(Tensor<double>::scalar(5.0));
    auto y2 = numerics::add(x2, x2);
    tape2.backward(y2);
    CHECK(tape2.grad(x2)[0] == 2.0);

    Tape<double> tape3;
    auto bad = tape3.leaf(Tensor<double>(2, 2));
    CHECK_THROWS_AS(tape3.backward(bad), std::invalid_argument);
}

namespace {

using BuildFn = std::function<Var<double>(Tape<double>&, std::vector<Var<double>>&)>;

double fd(std::vector<Tensor<double>> inputs, BuildFn build, double h = 1e-6) {
    return oracles::finite_difference_check(std::move(inputs), build, h);
}

// Projects a tensor output to a scalar through a fixed random functional so
// every entry contributes a distinct gradient path.
Var<double> project(Tape<double>& tape, Var<double> out, std::uint64_t salt) {
    Rng rng(salt);
    auto w = tape.constant(
        oracles::random_tensor(out.value().rows(), out.value().cols(), rng, 0.1, 1.0));
    return numerics::sum_all(numerics::mul(out, w));
}

}  // namespace

TEST_CASE("gradients match central finite differences for every op") {
    Rng rng(41);
    auto a34 = oracles::random_tensor(3, 4, rng);
    auto b34 = oracles::random_tensor(3, 4, rng);
    auto b45 = oracles::random_tensor(4, 5, rng);
    auto row4 = oracles::random_tensor(1, 4, rng);

    CHECK(fd({a34, b45}, [](auto& t, auto& v) {
              return project(t, numerics::matmul(v[0], v[1]), 1);
          }) < 1e-5);
    CHECK(fd({a34, b34}, [](auto& t, auto& v) {
              return project(t, numerics::add(v[0], v[1]), 2);
          }) < 1e-4);
    CHECK(fd({a34, row4}, [](auto& t, auto& v) {
              return project(t, numerics::add(v[0], v[1]), 3);
          }) < 1e-4);
    CHECK(fd({a34, b34}, [](auto& t, auto& v) {
              return project(t, numerics::sub(v[0], v[1]), 4);
          }) < 1e-4);
    CHECK(fd({a34, b34}, [](auto& t, auto& v) {
              return project(t, numerics::mul(v[0], v[1]), 5);
          }) < 1e-4);
    CHECK(fd({a34, row4}, [](auto& t, auto& v) {
              return project(t, numerics::mul(v[0], v[1]), 6);
          }) < 1e-4);
    CHECK(fd({a34}, [](auto& t, auto& v) {
              return project(t, numerics::scale(v[0], 2.5), 7);
          }) < 1e-4);
    CHECK(fd({a34, b34}, [](auto& t, auto& v) {
              return project(t, numerics::concat(v[0], v[1], 0), 8);
          }) < 1e-4);
    CHECK(fd({a34, b34}, [](auto& t, auto& v) {
              return project(t, numerics::concat(v[0], v[1], 1), 9);
          }) < 1e-4);
    CHECK(fd({a34}, [](auto& t, auto& v) {
              return project(t, numerics::slice_cols(v[0], 1, 3), 10);
          }) < 1e-4);
    CHECK(fd({a34}, [](auto& t, auto& v) {
              return project(t, numerics::gather_rows(v[0], {2, 0, 2}), 11);
          }) < 1e-4);
    CHECK(fd({a34}, [](auto& t, auto& v) {
              return project(t, numerics::sigmoid(v[0]), 12);
          }) < 1e-4);
    CHECK(fd({a34}, [](auto& t, auto& v) {
              return project(t, numerics::tanh(v[0]), 13);
          }) < 1e-4);
    // Shift inputs away from the ReLU kink where central differences lie.
    auto pos = a34;
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] += pos[i] > 0 ? 0.5 : -0.5;
    CHECK(fd({pos}, [](auto& t, auto& v) {
              return project(t, numerics::relu(v[0]), 14);
          }) < 1e-4);
    CHECK(fd({a34}, [](auto& t, auto& v) {
              return project(t, numerics::softmax_rows(v[0]), 15);
          }) < 1e-4);
    CHECK(fd({a34, row4, row4}, [](auto& t, auto& v) {
              return project(t, numerics::layer_norm(v[0], v[1], v[2], 1e-5), 16);
          }) < 1e-4);
}

TEST_CASE("masked attention gradient matches finite differences") {
    Rng rng(43);
    auto q = oracles::random_tensor(3, 4, rng);
    auto k = oracles::random_tensor(3, 4, rng);
    auto v = oracles::random_tensor(3, 4, rng);
    auto mask = std::make_shared<const std::vector<std::uint8_t>>(
        std::vector<std::uint8_t>{1, 1, 0});
    CHECK(fd({q, k, v}, [mask](auto& t, auto& vars) {
              return project(t, numerics::masked_attention(vars[0], vars[1], vars[2], mask, 2, 3),
                             17);
          }) < 1e-4);
}

TEST_CASE("cross-entropy and KD gradients match finite differences") {
    Rng rng(47);
    auto z = oracles::random_tensor(5, 2, rng, -2.0, 2.0);
    std::vector<int> labels = {0, 1, 1, 0, 1};
    CHECK(fd({z}, [labels](auto& t, auto& v) {
              return numerics::cross_entropy_logits(v[0], labels);
          }) < 1e-4);

    auto targets = numerics::softmax_rows(oracles::random_tensor(5, 2, rng));
    for (bool soften : {true, false}) {
        CHECK(fd({z}, [targets, soften](auto& t, auto& v) {
                  return numerics::kd_cross_entropy(v[0], targets, 2.0, soften, false);
              }) < 1e-4);
    }
    CHECK(fd({z}, [targets](auto& t, auto& v) {
              return numerics::kd_cross_entropy(v[0], targets, 3.0, true, true);
          }) < 1e-4);
}

TEST_CASE("adam holds still on zero gradients and descends on a quadratic") {
    Param<double> w("w", Tensor<double>::scalar(1.0));
    numerics::Adam<double> opt({&w}, {.learning_rate = 0.1});
    opt.zero_grad();
    opt.step();
    CHECK(w.value[0] == 1.0);

    // One step on f(w) = w^2 moves towards zero.
    opt.zero_grad();
    w.grad[0] = 2.0 * w.value[0];
    opt.step();
    CHECK(std::abs(w.value[0]) < 1.0);

    // 200 steps on a 3-parameter convex quadratic sum (w_i - c_i)^2.
    Param<double> p("p", Tensor<double>::from(1, 3, {0.4, -0.3, 0.2}));
    const double c[3] = {0.0, 0.1, -0.1};
    numerics::Adam<double> opt2({&p}, {.learning_rate = 5e-3});
    double gnorm = 0.0;
    for (int it = 0; it < 200; ++it) {
        opt2.zero_grad();
        gnorm = 0.0;
        for (int j = 0; j < 3; ++j) {
            p.grad[j] = 2.0 * (p.value[j] - c[j]);
            gnorm += p.grad[j] * p.grad[j];
        }
        opt2.step();
    }
    CHECK(std::sqrt(gnorm) < 1e-3);
}

TEST_CASE("global-norm clip caps the gradient norm") {
    Param<double> w("w", Tensor<double>::from(1, 2, {0.0, 0.0}));
    w.grad[0] = 30.0;
    w.grad[1] = 40.0;
    std::vector<Param<double>*> ps = {&w};
    const double before = numerics::clip_global_norm(ps, 5.0);
    CHECK(before == Catch::Approx(50.0));
    CHECK(std::hypot(w.grad[0], w.grad[1]) == Catch::Approx(5.0));

    w.grad[0] = 0.3;
    w.grad[1] = 0.4;
    numerics::clip_global_norm(ps, 5.0);
    CHECK(w.grad[0] == 0.3);  // untouched below the threshold
}

TEST_CASE("deterministic results under a fixed seed") {
    auto run = [] {
        Rng rng(99);
        auto a = oracles::random_tensor(6, 6, rng);
        auto b = oracles::random_tensor(6, 6, rng);
        return numerics::matmul(numerics::sigmoid(a), numerics::tanh(b));
    };
    CHECK(run() == run());
}

TEST_CASE("xavier initialization is bounded and seeded") {
    Rng rng1(7), rng2(7);
    auto a = numerics::xavier_uniform<double>(8, 4, 8, 4, rng1);
    auto b = numerics::xavier_uniform<double>(8, 4, 8, 4, rng2);
    CHECK(a == b);
    const double limit = std::sqrt(6.0 / 12.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i] <= limit);
        CHECK(a[i] >= -limit);
    }
}
