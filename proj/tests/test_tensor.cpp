#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "paq/grad_check.hpp"
#include "paq/tensor.hpp"

using namespace paq;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                     double lo = -3.0, double hi = 3.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("matmul identity and hand case") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from({2, 2}, {3.5, -1, 2, 0.25});
    Tensor y = matmul(eye, m);
    for (size_t i = 0; i < 4; ++i) CHECK(y.data()[i] == m.data()[i]);

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {0, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 2.0);
    CHECK(c.at(1, 0) == 4.0);
}

TEST_CASE("matmul rejects shape mismatch") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient matches finite differences") {
    std::mt19937_64 rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    auto f = [&]() { return sum_all(matmul(a, b)); };
    CHECK(finite_diff_check(f, {a, b}) < 1e-5);
}

TEST_CASE("softmax_rows basics") {
    Tensor x = Tensor::from({1, 3}, {0, 0, 0});
    Tensor y = softmax_rows(x);
    for (int j = 0; j < 3; ++j) CHECK(y.at(0, j) == Catch::Approx(1.0 / 3).epsilon(1e-12));

    Tensor big = Tensor::from({1, 2}, {1000, 0});
    Tensor yb = softmax_rows(big);
    CHECK(yb.at(0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(yb.at(0, 1) == Catch::Approx(0.0).margin(1e-12));

    Tensor lg = Tensor::from({1, 3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
    Tensor yl = softmax_rows(lg);
    CHECK(yl.at(0, 0) == Catch::Approx(1.0 / 6).epsilon(1e-12));
    CHECK(yl.at(0, 1) == Catch::Approx(2.0 / 6).epsilon(1e-12));
    CHECK(yl.at(0, 2) == Catch::Approx(3.0 / 6).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to 1 and are shift invariant") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({4, 6}, rng, false);
        Tensor y = softmax_rows(x);
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int j = 0; j < 6; ++j) s += y.at(i, j);
            CHECK(std::abs(s - 1.0) <= 1e-9);
        }
        Tensor shifted = add_const(x, 17.25);
        Tensor ys = softmax_rows(shifted);
        for (size_t i = 0; i < y.size(); ++i)
            CHECK(ys.data()[i] == Catch::Approx(y.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("elementwise trivial values") {
    Tensor x = Tensor::from({1, 2}, {-1, 2});
    Tensor r = relu(x);
    CHECK(r.at(0, 0) == 0.0);
    CHECK(r.at(0, 1) == 2.0);

    Tensor u = Tensor::from({1, 3}, {0.0, 3.0, 4.0});
    CHECK(cosine_rows(l2_normalize_rows(u), 0, 0).item() == Catch::Approx(1.0).epsilon(1e-12));

    Tensor cell = Tensor::from({1, 1, 2}, {1.5, -0.5});
    Tensor up = nearest_upsample2x(cell);
    REQUIRE(up.shape() == Shape{2, 2, 2});
    for (int i = 0; i < 4; ++i) {
        CHECK(up.data()[static_cast<size_t>(2 * i)] == 1.5);
        CHECK(up.data()[static_cast<size_t>(2 * i) + 1] == -0.5);
    }
}

TEST_CASE("backward fills leaves, accumulates on repeat") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    {
        Tape tape;
        Tensor loss = sum_all(x);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    {
        // a second pass on a fresh tape adds to the existing leaf gradients
        Tape tape;
        Tensor loss = sum_all(x);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 2.0);
    }
    x.zero_grad();
    {
        Tape tape;
        Tensor loss = mean_all(x);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 0.25);
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from({2, 1}, {1, 2}, true);
    Tape tape;
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("composite softmax + matmul gradient") {
    std::mt19937_64 rng(23);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    auto f = [&]() { return mean_all(softmax_rows(matmul(a, b))); };
    CHECK(finite_diff_check(f, {a, b}) < 1e-5);
}

TEST_CASE("forward passes are deterministic") {
    std::mt19937_64 rng(3);
    Tensor a = random_tensor({4, 4}, rng, false);
    Tensor b = random_tensor({4, 4}, rng, false);
    Tensor y1 = matmul(softmax_rows(a), sigmoid(b));
    Tensor y2 = matmul(softmax_rows(a), sigmoid(b));
    for (size_t i = 0; i < y1.size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("every differentiable op passes finite-difference checks") {
    std::mt19937_64 rng(99);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor m = random_tensor({4, 3}, rng);
    Tensor v = random_tensor({1, 4}, rng);
    Tensor col = random_tensor({3, 1}, rng);
    Tensor cube = random_tensor({2, 3, 4}, rng);
    Tensor big = random_tensor({6, 5, 2}, rng);
    Tensor stencil = random_tensor({9, 2}, rng);
    Tensor gain = random_tensor({1, 4}, rng, true, 0.5, 1.5);
    Tensor bias = random_tensor({1, 4}, rng);
    Tensor positive = random_tensor({3, 4}, rng, true, 0.05, 3.0);
    Tensor s = random_tensor({1, 1}, rng);
    // kink-free inputs for the piecewise ops: keep |x| and |a-b| away from 0
    Tensor kink_free = random_tensor({3, 4}, rng);
    for (double& x : kink_free.data())
        if (std::abs(x) < 0.05) x += x >= 0 ? 0.1 : -0.1;
    Tensor apart = Tensor::zeros({3, 4}, true);
    {
        std::uniform_real_distribution<double> off(0.1, 1.0);
        for (size_t i = 0; i < apart.size(); ++i)
            apart.data()[i] = a.data()[i] + (i % 2 ? off(rng) : -off(rng));
    }

    auto check = [&](const char* name, std::function<Tensor()> f, std::vector<Tensor> params) {
        INFO(name);
        CHECK(finite_diff_check(std::move(f), params) < 1e-4);
    };

    check("add", [&]() { return sum_all(mul(add(a, b), b)); }, {a, b});
    check("sub", [&]() { return sum_all(mul(sub(a, b), a)); }, {a, b});
    check("mul", [&]() { return mean_all(mul(a, b)); }, {a, b});
    check("div", [&]() { return mean_all(div(a, add_const(sigmoid(b), 0.5))); }, {a, b});
    check("vmin_vmax", [&]() { return sum_all(add(vmin(a, apart), vmax(a, apart))); }, {a, apart});
    check("scale_addc", [&]() { return sum_all(scale(add_const(a, 1.5), -0.75)); }, {a});
    check("relu", [&]() { return sum_all(relu(kink_free)); }, {kink_free});
    check("sigmoid", [&]() { return sum_all(sigmoid(a)); }, {a});
    check("abs", [&]() { return sum_all(abs_t(kink_free)); }, {kink_free});
    check("log", [&]() { return sum_all(log_t(positive)); }, {positive});
    check("pow", [&]() { return sum_all(pow_t(positive, 2.0)); }, {positive});
    check("matmul_t", [&]() { return mean_all(matmul(a, m)); }, {a, m});
    check("transpose", [&]() { return sum_all(mul(transpose(m), a)); }, {m, a});
    check("reshape", [&]() { return sum_all(reshape(a, {4, 3})); }, {a});
    check("softmax", [&]() { return mean_all(mul(softmax_rows(a), b)); }, {a, b});
    check("sum_mean", [&]() { return add(sum_all(a), mean_all(b)); }, {a, b});
    check("mean_rows", [&]() { return sum_all(mul(mean_rows(a), v)); }, {a, v});
    check("pick", [&]() { return mul(pick(a, 1, 2), pick(b, 0, 3)); }, {a, b});
    check("add_rowvec", [&]() { return mean_all(mul(add_rowvec(a, v), b)); }, {a, v, b});
    check("mul_rowvec", [&]() { return mean_all(mul_rowvec(a, v)); }, {a, v});
    check("mul_colvec", [&]() { return mean_all(mul_colvec(a, col)); }, {a, col});
    check("add_scalar_t", [&]() { return mean_all(add_scalar_t(a, s)); }, {a, s});
    check("l2_normalize", [&]() { return sum_all(mul(l2_normalize_rows(a), b)); }, {a, b});
    check("cosine_rows", [&]() { return cosine_rows(a, 0, 2); }, {a});
    check("upsample", [&]() { return mean_all(nearest_upsample2x(cube)); }, {cube});
    check("stencil", [&]() { return mean_all(dilated_stencil(big, stencil)); }, {big, stencil});
    check("layernorm", [&]() { return mean_all(mul(layernorm_rows(a, gain, bias), b)); },
          {a, gain, bias, b});
}

TEST_CASE("finite_diff_check contract") {
    std::mt19937_64 rng(41);
    Tensor theta = random_tensor({2, 3}, rng);
    auto quadratic = [&]() { return scale(sum_all(mul(theta, theta)), 0.5); };
    CHECK(finite_diff_check(quadratic, theta) < 1e-8);

    CHECK_THROWS_AS(finite_diff_check(quadratic, theta, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(finite_diff_check(quadratic, theta, 0.0), std::invalid_argument);

    std::mt19937_64 noisy_rng(1);
    std::normal_distribution<double> noise(0.0, 1.0);
    auto nondeterministic = [&]() { return add_const(sum_all(theta), noise(noisy_rng)); };
    CHECK_THROWS_AS(finite_diff_check(nondeterministic, theta), std::invalid_argument);
}
