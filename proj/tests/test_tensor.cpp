#include <catch2/catch_amalgamated.hpp>

#include "dscope/ops.hpp"
#include "helpers.hpp"

using namespace dscope;
using testing_helpers::random_tensor;

TEST_CASE("tensor shape and data stay consistent") {
    Tensor t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1, 2, 3}), ShapeError);

    Tensor r = t.reshaped({3, 2});
    CHECK(r.data() == t.data());  // shared storage
    CHECK(r.id() != t.id());      // fresh identity
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("matmul identity and hand-computed dot product") {
    Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor b(Shape{2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(c[i] == b[i]);

    Tensor row(Shape{1, 2}, {1, 2});
    Tensor col(Shape{2, 1}, {3, 4});
    CHECK(matmul(row, col)[0] == 11.0);
}

TEST_CASE("matmul rejects mismatched inner extents with both shapes") {
    Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_MATCHES(matmul(a, b), ShapeError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("[2x3]") &&
                             Catch::Matchers::ContainsSubstring("[2x3]")));
}

TEST_CASE("matmul is associative on random inputs") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng() % 6, k = 1 + rng() % 6, n = 1 + rng() % 6,
                          p = 1 + rng() % 6;
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c = random_tensor({n, p}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            const double denom = std::max(1.0, std::abs(left[i]));
            CHECK(std::abs(left[i] - right[i]) / denom < 1e-9);
        }
    }
}

TEST_CASE("batched matmul matches per-slice products") {
    std::mt19937_64 rng(7);
    Tensor a = random_tensor({3, 4, 5}, rng);
    Tensor b = random_tensor({3, 5, 2}, rng);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{3, 4, 2});
    for (std::size_t s = 0; s < 3; ++s) {
        Tensor as(Shape{4, 5}, std::vector<double>(a.data() + s * 20, a.data() + (s + 1) * 20));
        Tensor bs(Shape{5, 2}, std::vector<double>(b.data() + s * 10, b.data() + (s + 1) * 10));
        Tensor cs = matmul(as, bs);
        for (std::size_t i = 0; i < 8; ++i) CHECK(c[s * 8 + i] == Catch::Approx(cs[i]));
    }
}

TEST_CASE("matmul_nt equals matmul with transposed operand") {
    std::mt19937_64 rng(9);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 5, 4}, rng);
    Tensor nt = matmul_nt(a, b);
    // transpose b manually
    std::vector<double> tb(2 * 4 * 5);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                tb[(s * 4 + j) * 5 + i] = b[(s * 5 + i) * 4 + j];
    Tensor ref = matmul(a, Tensor(Shape{2, 4, 5}, std::move(tb)));
    for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt[i] == Catch::Approx(ref[i]).margin(1e-12));
}

TEST_CASE("softmax rows: symmetry, shift invariance, closed form") {
    Tensor flat = softmax_rows(Tensor(Shape{1, 3}, {0, 0, 0}));
    for (std::size_t i = 0; i < 3; ++i) CHECK(flat[i] == Catch::Approx(1.0 / 3).epsilon(1e-12));

    Tensor big = softmax_rows(Tensor(Shape{1, 2}, {1000, 1000}));
    CHECK(big[0] == Catch::Approx(0.5).epsilon(1e-12));

    Tensor ln3 = softmax_rows(Tensor(Shape{1, 2}, {0.0, std::log(3.0)}));
    CHECK(ln3[0] == Catch::Approx(0.25).epsilon(1e-12));
    CHECK(ln3[1] == Catch::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 1 + rng() % 4, n = 2 + rng() % 6;
        Tensor x = random_tensor({rows, n}, rng, -5, 5);
        Tensor s = softmax_rows(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double sum = 0;
            for (std::size_t j = 0; j < n; ++j) sum += s[r * n + j];
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
        std::uniform_real_distribution<double> cd(-100, 100);
        const double c = cd(rng);
        std::vector<double> shifted(x.data(), x.data() + x.size());
        for (auto& v : shifted) v += c;
        Tensor s2 = softmax_rows(Tensor(x.shape(), std::move(shifted)));
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - s2[i]) <= 1e-12);
    }
}

TEST_CASE("softmax masking zeroes masked positions and rejects fully masked rows") {
    Tensor x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor mask(Shape{2, 3}, {0, kMaskNegInf, kMaskNegInf, 0, 0, kMaskNegInf});
    Tensor s = softmax_rows(x, &mask);
    CHECK(s[0] == 1.0);
    CHECK(s[1] <= 1e-30);
    CHECK(s[2] <= 1e-30);
    CHECK(s[5] <= 1e-30);
    CHECK(s[3] + s[4] == Catch::Approx(1.0).epsilon(1e-12));

    Tensor all_masked(Shape{1, 2}, {kMaskNegInf, kMaskNegInf});
    CHECK_THROWS_MATCHES(softmax_rows(x.reshaped({2, 3}), &all_masked), NumericError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("fully masked attention row")));
}

TEST_CASE("layer_norm examples") {
    Tensor gain1 = Tensor::full({4}, 1.0);
    Tensor bias0 = Tensor::zeros({4});
    Tensor constant(Shape{1, 4}, {1, 1, 1, 1});
    Tensor out = layer_norm(constant, gain1, bias0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == 0.0);

    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor pm(Shape{1, 2}, {-1, 1});
    Tensor out2 = layer_norm(pm, g2, b2, 1e-12);
    CHECK(out2[0] == Catch::Approx(-1.0).epsilon(1e-9));
    CHECK(out2[1] == Catch::Approx(1.0).epsilon(1e-9));

    Tensor gain2 = Tensor::full({2}, 2.0);
    Tensor bias1 = Tensor::full({2}, 1.0);
    Tensor z2(Shape{1, 2}, {0, 2});
    Tensor out3 = layer_norm(z2, gain2, bias1, 1e-12);
    CHECK(out3[0] == Catch::Approx(-1.0).epsilon(1e-9));
    CHECK(out3[1] == Catch::Approx(3.0).epsilon(1e-9));

    CHECK_THROWS_AS(layer_norm(pm, g2, b2, 0.0), ConfigError);
    CHECK_THROWS_AS(layer_norm(Tensor(Shape{1, 1}, {1.0}), Tensor::full({1}, 1.0),
                               Tensor::zeros({1})),
                    ShapeError);
}

TEST_CASE("head split and merge are inverse permutations") {
    std::mt19937_64 rng(21);
    Tensor x = random_tensor({3, 4, 6}, rng);
    Tensor back = merge_heads(split_heads(x, 2), 2);
    CHECK(testing_helpers::max_abs_diff(x, back) == 0.0);
}

TEST_CASE("float32 path computes the same ops") {
    std::mt19937_64 rng(5);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor b = random_tensor({3, 2}, rng);
    TensorF c32 = matmul(a.cast<float>(), b.cast<float>());
    Tensor c64 = matmul(a, b);
    for (std::size_t i = 0; i < c64.size(); ++i)
        CHECK(std::abs(static_cast<double>(c32[i]) - c64[i]) < 1e-5);
}
