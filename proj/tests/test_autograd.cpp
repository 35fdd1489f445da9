#include <catch2/catch_amalgamated.hpp>

#include "dscope/gradcheck.hpp"
#include "helpers.hpp"

using namespace dscope;
using testing_helpers::random_tensor;

namespace {

// Finite-difference check of one op embedded in a tiny graph. The graph ends
// in mean_all(mul(y, w)) with a fixed random weighting so every output
// element influences the loss.
double fd_check_op(const std::function<Tensor(const std::vector<Tensor>&)>& build,
                   std::vector<Tensor> params, std::uint64_t seed) {
    Tensor weights;
    auto f = [&](const std::vector<Tensor>& p) {
        Tensor y = build(p);
        if (weights.empty()) {
            std::mt19937_64 rng(seed ^ 0xabcdef);
            weights = random_tensor(y.shape(), rng);
        }
        return mean_all(mul(y, weights));
    };
    auto report = grad_check(f, std::move(params), {}, 1e-5, 1e-4, seed, 64);
    return report.max_rel_err;
}

}  // namespace

TEST_CASE("every differentiable op matches finite differences on random shapes") {
    std::mt19937_64 rng(1234);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t m = 2 + rng() % 3, k = 2 + rng() % 3, n = 2 + rng() % 3;
        const std::uint64_t seed = rng();
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({m, k}, rng);
        Tensor w = random_tensor({k, n}, rng);
        Tensor v = random_tensor({k}, rng);

        CHECK(fd_check_op([](const auto& p) { return add(p[0], p[1]); }, {a, b}, seed) < 1e-4);
        CHECK(fd_check_op([](const auto& p) { return sub(p[0], p[1]); }, {a, b}, seed) < 1e-4);
        CHECK(fd_check_op([](const auto& p) { return mul(p[0], p[1]); }, {a, b}, seed) < 1e-4);
        CHECK(fd_check_op([](const auto& p) { return scale(p[0], 1.7); }, {a}, seed) < 1e-4);
        CHECK(fd_check_op([](const auto& p) { return add_rowvec(p[0], p[1]); }, {a, v}, seed) <
              1e-4);
        CHECK(fd_check_op([](const auto& p) { return matmul(p[0], p[1]); }, {a, w}, seed) < 1e-4);
        CHECK(fd_check_op([](const auto& p) { return gelu(p[0]); }, {a}, seed) < 1e-4);
        CHECK(fd_check_op([](const auto& p) { return softmax_rows(p[0]); }, {a}, seed) < 1e-4);
        CHECK(fd_check_op([m, k](const auto& p) { return reshape(p[0], {k, m}); }, {a}, seed) <
              1e-4);
    }
}

TEST_CASE("structured ops match finite differences") {
    std::mt19937_64 rng(77);
    const std::uint64_t seed = 31;
    Tensor x3 = random_tensor({2, 3, 4}, rng);
    Tensor q = random_tensor({2, 3, 4}, rng);
    Tensor kk = random_tensor({2, 5, 4}, rng);
    Tensor gain = random_tensor({4}, rng, 0.5, 1.5);
    Tensor bias = random_tensor({4}, rng);
    Tensor rows = random_tensor({4, 3}, rng);
    Tensor rs = random_tensor({4}, rng, 0.5, 2.0);
    Tensor rm = random_tensor({4}, rng);
    Tensor table = random_tensor({2, 4}, rng);
    Tensor a8 = random_tensor({4, 4}, rng);

    CHECK(fd_check_op([](const auto& p) { return layer_norm(p[0], p[1], p[2]); },
                      {x3, gain, bias}, seed) < 1e-4);
    CHECK(fd_check_op([](const auto& p) { return matmul_nt(p[0], p[1]); }, {q, kk}, seed) < 1e-4);
    CHECK(fd_check_op([](const auto& p) { return split_heads(p[0], 2); }, {x3}, seed) < 1e-4);
    CHECK(fd_check_op([](const auto& p) { return merge_heads(p[0], 2); }, {x3}, seed) < 1e-4);
    CHECK(fd_check_op([](const auto& p) { return unfold_channels(p[0], 2); }, {rows}, seed) <
          1e-4);
    CHECK(fd_check_op([](const auto& p) { return rowwise_affine(p[0], p[1], p[2]); },
                      {rows, rs, rm}, seed) < 1e-4);
    CHECK(fd_check_op([](const auto& p) { return add_cycle_rows(p[0], p[1]); }, {a8, table},
                      seed) < 1e-4);

    // masked softmax keeps gradients zero on masked logits
    Tensor mask = causal_mask<double>(4);
    Tensor logits = random_tensor({2, 4, 4}, rng);
    CHECK(fd_check_op([&mask](const auto& p) { return softmax_rows(p[0], &mask); }, {logits},
                      seed) < 1e-4);
}

TEST_CASE("quadratic f: analytic 2*theta matches finite differences tightly") {
    std::mt19937_64 rng(3);
    Tensor theta = random_tensor({5}, rng, -2, 2);
    auto f = [](const std::vector<Tensor>& p) { return sum_all(mul(p[0], p[0])); };
    {
        GradTape tape;
        std::vector<Tensor> params{theta};
        params[0].set_requires_grad(true);
        Tensor loss = f(params);
        tape.backward(loss);
        Tensor g = tape.grad(params[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(g[i] == Catch::Approx(2.0 * params[0][i]).epsilon(1e-12));
    }
    auto report = grad_check(f, {theta}, {"theta"}, 1e-5, 1e-6, 0, 100);
    CHECK(report.max_rel_err < 1e-6);
    CHECK(report.passed);
}

TEST_CASE("constant function has exactly zero gradients") {
    Tensor theta(Shape{3}, {1, 2, 3});
    auto f = [](const std::vector<Tensor>& p) { return scale(sum_all(p[0]), 0.0); };
    GradTape tape;
    std::vector<Tensor> params{theta};
    params[0].set_requires_grad(true);
    Tensor loss = f(params);
    tape.backward(loss);
    Tensor g = tape.grad(params[0]);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);

    auto report = grad_check(f, {theta}, {}, 1e-5, 1e-4, 0);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("tensors off the loss path have exactly zero gradient") {
    Tensor used(Shape{2}, {1, 2});
    Tensor unused(Shape{2}, {3, 4});
    used.set_requires_grad(true);
    unused.set_requires_grad(true);
    GradTape tape;
    Tensor loss = sum_all(mul(used, used));
    Tensor side = scale(unused, 2.0);  // recorded but not on the loss path
    (void)side;
    tape.backward(loss);
    Tensor g = tape.grad(unused);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
}

TEST_CASE("shared subexpressions accumulate, not overwrite") {
    Tensor x(Shape{1}, {3.0});
    x.set_requires_grad(true);
    GradTape tape;
    Tensor sq = mul(x, x);
    Tensor y = add(sq, sq);  // y = 2 x^2, dy/dx = 4x
    tape.backward(sum_all(y));
    CHECK(tape.grad(x)[0] == Catch::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("no recording happens without an active tape") {
    Tensor a(Shape{2}, {1, 2});
    a.set_requires_grad(true);
    Tensor b = scale(a, 2.0);  // outside any tape
    GradTape tape;
    CHECK_FALSE(tape.tracked(b));
    Tensor loss = sum_all(scale(a, 1.0));
    tape.backward(loss);
    CHECK(tape.node_count() >= 2);
}

TEST_CASE("grad_check input validation") {
    Tensor theta(Shape{2}, {1, 2});
    auto f = [](const std::vector<Tensor>& p) { return sum_all(p[0]); };
    CHECK_THROWS_AS(grad_check(f, {theta}, {}, 1e-7), ConfigError);
    CHECK_THROWS_AS(grad_check(f, {theta}, {}, 1e-3), ConfigError);
    auto bad = [](const std::vector<Tensor>& p) {
        return scale(sum_all(p[0]), std::numeric_limits<double>::quiet_NaN());
    };
    CHECK_THROWS_AS(grad_check(bad, {theta}), EvalError);
}
