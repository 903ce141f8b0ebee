#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "stvg/gradcheck.hpp"
#include "stvg/rng.hpp"
#include "stvg/tensor.hpp"

using namespace stvg;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0,
                     bool requires_grad = true) {
    std::vector<double> v(static_cast<size_t>(shape_size(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Checks an op composed with a fixed random linear readout, three seeds each.
void check_op_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& op,
                        const std::vector<Shape>& shapes, uint64_t seed,
                        double lo = -2.0, double hi = 2.0) {
    for (uint64_t s = seed; s < seed + 3; ++s) {
        Rng rng(s);
        std::vector<Tensor> inputs;
        for (const Shape& sh : shapes) inputs.push_back(random_tensor(rng, sh, lo, hi));
        Rng coeff(s + 1000);
        std::vector<double> c;
        {
            NoGradGuard ng;
            Tensor out = op(inputs);
            c.resize(static_cast<size_t>(out.size()));
            for (double& x : c) x = coeff.uniform(-1.0, 1.0);
        }
        auto f = [&]() {
            Tensor out = op(inputs);
            return sum_all(mul(out, Tensor::from_data(out.shape(), c)));
        };
        const auto rep = grad_check(f, inputs, 1e-5, 1e-4);
        INFO("seed ", s, " worst ", rep.worst.name, "[", rep.worst.index, "] analytic ",
             rep.worst.analytic, " numeric ", rep.worst.numeric);
        CHECK(rep.pass);
    }
}

}  // namespace

TEST_CASE("matmul basics") {
    const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(bitwise_equal(matmul(eye, m), m));

    const Tensor sel = Tensor::from_data({1, 2}, {1, 0});
    const Tensor col = Tensor::from_data({2, 1}, {5, 7});
    CHECK(matmul(sel, col).item() == 5.0);

    Rng rng(3);
    const Tensor a = random_tensor(rng, {3, 4}, -1, 1, false);
    const Tensor b = random_tensor(rng, {4, 2}, -1, 1, false);
    const Tensor c = matmul(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double s = 0.0;
            for (int p = 0; p < 4; ++p) s += a.at({i, p}) * b.at({p, j});
            CHECK(std::abs(c.at({i, j}) - s) <= 1e-12);
        }

    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("softmax values") {
    const Tensor t = softmax(Tensor::from_data({2}, {0, 0}), 0);
    CHECK(t.at({0}) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(t.at({1}) == doctest::Approx(0.5).epsilon(1e-12));

    const Tensor r = softmax(Tensor::from_data({2}, {std::log(1.0), std::log(3.0)}), 0);
    CHECK(r.at({0}) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(r.at({1}) == doctest::Approx(0.75).epsilon(1e-12));

    // Large inputs: equals the closed form of the max-shifted logits.
    const Tensor big = softmax(Tensor::from_data({2}, {1000.0, 1001.0}), 0);
    const double e = std::exp(-1.0);
    CHECK(big.at({0}) == doctest::Approx(e / (1 + e)).epsilon(1e-12));
    CHECK(big.at({1}) == doctest::Approx(1 / (1 + e)).epsilon(1e-12));

    // Shift invariance.
    Rng rng(5);
    const Tensor x = random_tensor(rng, {4, 6}, -3, 3, false);
    const Tensor shifted = softmax(add_scalar(x, 17.5), 1);
    const Tensor plain = softmax(x, 1);
    for (int64_t i = 0; i < plain.size(); ++i)
        CHECK(plain.data()[i] == doctest::Approx(shifted.data()[i]).epsilon(1e-12));

    // Rows sum to one within 1e-9 on every axis choice.
    for (int axis = 0; axis < 2; ++axis) {
        const Tensor y = softmax(x, axis);
        const int lines = axis == 0 ? 6 : 4;
        for (int l = 0; l < lines; ++l) {
            double s = 0.0;
            for (int j = 0; j < (axis == 0 ? 4 : 6); ++j)
                s += axis == 0 ? y.at({j, l}) : y.at({l, j});
            CHECK(std::abs(s - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("layer norm values") {
    const Tensor gamma = Tensor::full({4}, 1.0);
    const Tensor beta = Tensor::zeros({4});

    // Constant vector: zero variance handled through eps.
    const Tensor c = layer_norm(Tensor::full({1, 4}, 3.25), gamma, beta, 1e-5);
    for (int j = 0; j < 4; ++j) CHECK(c.at({0, j}) == doctest::Approx(0.0).epsilon(1e-12));

    // Two-point standardization as eps vanishes.
    const Tensor g2 = Tensor::full({2}, 1.0);
    const Tensor b2 = Tensor::zeros({2});
    const Tensor two = layer_norm(Tensor::from_data({1, 2}, {1, 3}), g2, b2, 1e-12);
    CHECK(two.at({0, 0}) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(two.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-9));

    // Output statistics on a high-variance random vector.
    Rng rng(9);
    const int d = 64;
    const Tensor gd = Tensor::full({d}, 1.0);
    const Tensor bd = Tensor::zeros({d});
    const Tensor x = random_tensor(rng, {1, d}, -10.0, 10.0, false);
    const Tensor y = layer_norm(x, gd, bd, 1e-5);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += y.at({0, j});
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (y.at({0, j}) - mean) * (y.at({0, j}) - mean);
    var /= d;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
}

TEST_CASE("mean pool values and gradient") {
    const Tensor one_axis = mean_pool(Tensor::from_data({1, 3}, {4, 5, 6}), {0});
    CHECK(bitwise_equal(one_axis, Tensor::from_data({3}, {4, 5, 6})));

    const Tensor m = mean_pool(Tensor::from_data({2, 2}, {1, 3, 5, 7}), {0});
    CHECK(m.at({0}) == 3.0);
    CHECK(m.at({1}) == 5.0);

    // d(mean)/dx is 1/n per element.
    Tensor x = Tensor::from_data({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    Tensor s = sum_all(mean_pool(x, {0}));
    s.backward();
    for (int64_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(0.25).epsilon(1e-12));

    auto f = [&]() { return sum_all(mean_pool(x, {0})); };
    const auto rep = grad_check(f, {x}, 1e-5, 1e-4);
    CHECK(rep.pass);

    CHECK_THROWS_AS(mean_pool(x, {}), std::invalid_argument);
    CHECK_THROWS_AS(mean_pool(x, {2}), std::invalid_argument);
}

TEST_CASE("grad_check reference cases") {
    // f(x) = sum(x^2) at [1,2] -> gradient [2,4].
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    auto f = [&]() { return sum_all(mul(x, x)); };
    const auto rep = grad_check(f, {x}, 1e-5, 1e-8);
    CHECK(rep.pass);
    x.zero_grad();
    Tensor y = f();
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));

    // softmax-then-pick-first at [0,0] -> gradient [0.25, -0.25].
    Tensor z = Tensor::from_data({1, 2}, {0, 0}, true);
    z.grad_vec();
    z.zero_grad();
    Tensor first = sum_all(slice_cols(softmax(z, 1), 0, 1));
    first.backward();
    CHECK(z.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(z.grad()[1] == doctest::Approx(-0.25).epsilon(1e-12));

    CHECK_THROWS_AS(grad_check(f, {x}, 1e-3, 1e-4), std::invalid_argument);
}

TEST_CASE("gradients accumulate when one tensor feeds two consumers") {
    Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    Tensor s = sum_all(add(mul(x, x), x));  // d/dx = 2x + 1
    s.backward();
    CHECK(x.grad()[0] == doctest::Approx(3.0));
    CHECK(x.grad()[1] == doctest::Approx(-3.0));
    CHECK(x.grad()[2] == doctest::Approx(2.0));
}

TEST_CASE("non-finite forward results are an error state") {
    const Tensor zero = Tensor::zeros({2});
    CHECK_THROWS_AS(log_ew(zero), std::runtime_error);
    const Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(add(big, big), std::runtime_error);
}

TEST_CASE("tensor construction invariants") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::zeros({0, 2}), std::invalid_argument);
    const Tensor s = Tensor::scalar(4.0);
    CHECK(s.rank() == 0);
    CHECK(s.item() == 4.0);
}

TEST_CASE("gradient checks across the op library") {
    // elementwise
    check_op_gradients([](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
                       {{3, 4}, {3, 4}}, 100);
    check_op_gradients([](const std::vector<Tensor>& in) { return sub(in[0], in[1]); },
                       {{3, 4}, {3, 4}}, 110);
    check_op_gradients([](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
                       {{3, 4}, {3, 4}}, 120);
    check_op_gradients([](const std::vector<Tensor>& in) { return div_ew(in[0], in[1]); },
                       {{3, 4}, {3, 4}}, 130, 0.5, 2.0);
    check_op_gradients([](const std::vector<Tensor>& in) { return min_ew(in[0], in[1]); },
                       {{3, 4}, {3, 4}}, 140);
    check_op_gradients([](const std::vector<Tensor>& in) { return max_ew(in[0], in[1]); },
                       {{3, 4}, {3, 4}}, 150);
    check_op_gradients([](const std::vector<Tensor>& in) { return log_ew(in[0]); },
                       {{3, 4}}, 160, 0.2, 3.0);
    check_op_gradients([](const std::vector<Tensor>& in) { return sigmoid(in[0]); },
                       {{3, 4}}, 170);
    check_op_gradients([](const std::vector<Tensor>& in) { return relu(in[0]); },
                       {{3, 4}}, 180);
    check_op_gradients([](const std::vector<Tensor>& in) { return abs_ew(in[0]); },
                       {{3, 4}}, 190);
    check_op_gradients([](const std::vector<Tensor>& in) { return clamp(in[0], -1.0, 1.0); },
                       {{3, 4}}, 200);
    check_op_gradients([](const std::vector<Tensor>& in) { return mul_scalar(add_scalar(in[0], 0.7), -1.3); },
                       {{3, 4}}, 210);

    // linear algebra
    for (int flags = 0; flags < 4; ++flags) {
        const bool ta = flags & 1, tb = flags & 2;
        const Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
        const Shape sb = tb ? Shape{2, 4} : Shape{4, 2};
        check_op_gradients(
            [ta, tb](const std::vector<Tensor>& in) { return matmul(in[0], in[1], ta, tb); },
            {sa, sb}, 220 + static_cast<uint64_t>(flags) * 3);
        const Shape ba = ta ? Shape{2 * 4, 3} : Shape{2 * 3, 4};
        const Shape bb = tb ? Shape{2 * 2, 4} : Shape{2 * 4, 2};
        check_op_gradients(
            [ta, tb](const std::vector<Tensor>& in) { return bmm(in[0], in[1], 2, ta, tb); },
            {ba, bb}, 240 + static_cast<uint64_t>(flags) * 3);
    }

    // normalization / reductions
    check_op_gradients([](const std::vector<Tensor>& in) { return softmax(in[0], 1); },
                       {{3, 5}}, 260);
    check_op_gradients([](const std::vector<Tensor>& in) { return softmax(in[0], 0); },
                       {{3, 5}}, 270);
    check_op_gradients(
        [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2], 1e-5); },
        {{4, 6}, {6}, {6}}, 280);
    check_op_gradients([](const std::vector<Tensor>& in) { return mean_pool(in[0], {1}); },
                       {{3, 4, 2}}, 290);
    check_op_gradients([](const std::vector<Tensor>& in) { return mean_pool(in[0], {0, 2}); },
                       {{3, 4, 2}}, 300);
    check_op_gradients([](const std::vector<Tensor>& in) { return sum_cols(in[0]); },
                       {{4, 3}}, 310);

    // broadcasts
    check_op_gradients([](const std::vector<Tensor>& in) { return add_bias_rows(in[0], in[1]); },
                       {{4, 3}, {3}}, 320);
    check_op_gradients([](const std::vector<Tensor>& in) { return row_mul(in[0], in[1]); },
                       {{4, 3}, {4}}, 330);
    check_op_gradients([](const std::vector<Tensor>& in) { return row_div(in[0], in[1]); },
                       {{4, 3}, {4}}, 340, 0.5, 2.0);

    // structure
    check_op_gradients([](const std::vector<Tensor>& in) { return reshape(in[0], {6, 2}); },
                       {{3, 4}}, 350);
    check_op_gradients([](const std::vector<Tensor>& in) { return concat_rows(in[0], in[1]); },
                       {{2, 3}, {4, 3}}, 360);
    check_op_gradients([](const std::vector<Tensor>& in) { return concat_cols(in[0], in[1]); },
                       {{3, 2}, {3, 4}}, 370);
    check_op_gradients([](const std::vector<Tensor>& in) { return slice_rows(in[0], 1, 2); },
                       {{4, 3}}, 380);
    check_op_gradients([](const std::vector<Tensor>& in) { return slice_cols(in[0], 1, 2); },
                       {{3, 4}}, 390);
    check_op_gradients(
        [](const std::vector<Tensor>& in) { return gather_rows(in[0], {2, 0, 2, 1}); },
        {{3, 4}}, 400);
    check_op_gradients([](const std::vector<Tensor>& in) { return repeat_rows(in[0], 3); },
                       {{2, 4}}, 410);
    check_op_gradients([](const std::vector<Tensor>& in) { return pool_segments(in[0]); },
                       {{4, 3}}, 420);
    check_op_gradients(
        [](const std::vector<Tensor>& in) { return segment_mean_rows(in[0], {2, 0, 3, 1}); },
        {{6, 3}}, 430);
    check_op_gradients(
        [](const std::vector<Tensor>& in) {
            return conv2d_grid(in[0], in[1], in[2], 3, 4, 3, 3);
        },
        {{12, 2}, {3, 2 * 9}, {3}}, 440);
}

TEST_CASE("gather_rows with repeats shares upstream rows") {
    Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor picked = gather_rows(table, {1, 1});
    Tensor s = sum_all(picked);
    s.backward();
    CHECK(table.grad()[0] == 0.0);
    CHECK(table.grad()[2] == 2.0);  // row 1 consumed twice
    CHECK(table.grad()[3] == 2.0);
    CHECK(table.grad()[4] == 0.0);
}

TEST_CASE("pool_segments structure") {
    Rng rng(77);
    const int t = 5, d = 3;
    Tensor x = random_tensor(rng, {t, d}, -1, 1, false);
    Tensor m = pool_segments(x);
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < t; ++j) {
            for (int c = 0; c < d; ++c) {
                const double v = m.at({i * t + j, c});
                if (i > j) {
                    CHECK(v == 0.0);
                } else {
                    double s = 0.0;
                    for (int r = i; r <= j; ++r) s += x.at({r, c});
                    CHECK(v == doctest::Approx(s / (j - i + 1)).epsilon(1e-12));
                }
            }
        }
    }
    // Diagonal is the row itself, bitwise.
    for (int i = 0; i < t; ++i)
        for (int c = 0; c < d; ++c) CHECK(m.at({i * t + i, c}) == x.at({i, c}));
}

TEST_CASE("no-grad mode suppresses graph construction") {
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    NoGradGuard ng;
    Tensor y = sum_all(mul(x, x));
    CHECK_FALSE(y.requires_grad());
}
