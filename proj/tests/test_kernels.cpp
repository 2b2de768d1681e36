#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "omnixfer/kernels.hpp"
#include "omnixfer/rng.hpp"

using namespace omnixfer;

namespace {

// Independent oracle: the plain triple loop, written here so it cannot share
// a code path with the library kernels.
Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<double> c({m, n});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) acc += a(i, t) * b(t, j);
            c(i, j) = acc;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("matmul identity case") {
    const Tensor<double> eye({2, 2}, {1, 0, 0, 1});
    const Tensor<double> b({2, 2}, {3, 4, 5, 6});
    CHECK(bit_equal(kernels::matmul(eye, b), b));
}

TEST_CASE("matmul 1x1 dot product") {
    const Tensor<double> a({1, 2}, {1, 2});
    const Tensor<double> b({2, 1}, {3, 4});
    CHECK(kernels::matmul(a, b)(0, 0) == 11.0);
}

TEST_CASE("matmul matches the naive oracle exactly in 64-bit") {
    Rng rng(11);
    const Tensor<double> a = seeded_normal<double>({5, 7}, rng);
    const Tensor<double> b = seeded_normal<double>({7, 3}, rng);
    CHECK(bit_equal(kernels::matmul(a, b), matmul_oracle(a, b)));
}

TEST_CASE("matmul equals the oracle for all shapes up to 16") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const int64_t m = 1 + rng.next_u32() % 16;
        const int64_t k = 1 + rng.next_u32() % 16;
        const int64_t n = 1 + rng.next_u32() % 16;
        const Tensor<double> a = seeded_normal<double>({m, k}, rng);
        const Tensor<double> b = seeded_normal<double>({k, n}, rng);
        REQUIRE(bit_equal(kernels::matmul(a, b), matmul_oracle(a, b)));
        REQUIRE(bit_equal(kernels::matmul_serial(a, b), matmul_oracle(a, b)));
    }
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    const Tensor<double> a({5, 7});
    const Tensor<double> b({8, 3});
    CHECK_THROWS_WITH_AS(kernels::matmul(a, b), doctest::Contains("[5,7]"),
                         std::invalid_argument);
    CHECK_THROWS_WITH_AS(kernels::matmul(a, b), doctest::Contains("[8,3]"),
                         std::invalid_argument);
}

TEST_CASE("parallel kernels are bit-identical to the serial references") {
    Rng rng(17);
    // Big enough to clear the parallel-work threshold.
    const Tensor<float> a = seeded_normal<float>({96, 64}, rng);
    const Tensor<float> b = seeded_normal<float>({64, 96}, rng);
    const Tensor<float> c = seeded_normal<float>({96, 64}, rng);
    CHECK(bit_equal(kernels::matmul(a, b), kernels::matmul_serial(a, b)));
    CHECK(bit_equal(kernels::matmul_nt(a, c), kernels::matmul_nt_serial(a, c)));
    CHECK(bit_equal(kernels::softmax_rows(a), kernels::softmax_rows_serial(a)));
}

TEST_CASE("matmul_nt agrees with matmul against explicit transpose") {
    Rng rng(19);
    const Tensor<double> a = seeded_normal<double>({6, 5}, rng);
    const Tensor<double> b = seeded_normal<double>({4, 5}, rng);
    CHECK(max_abs_diff(kernels::matmul_nt(a, b), kernels::matmul(a, transpose2d(b))) == 0.0);
}

TEST_CASE("softmax symmetry") {
    const Tensor<double> m({1, 2}, {0, 0});
    const Tensor<double> s = kernels::softmax_rows(m);
    CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance avoids overflow") {
    const Tensor<double> m({1, 3}, {1000, 1000, 1000});
    const Tensor<double> s = kernels::softmax_rows(m);
    for (int j = 0; j < 3; ++j) {
        CHECK(std::isfinite(s(0, j)));
        CHECK(s(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax matches direct 64-bit evaluation") {
    const Tensor<double> m({1, 3}, {1, 2, 3});
    const Tensor<double> s = kernels::softmax_rows(m);
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int j = 0; j < 3; ++j) {
        CHECK(std::abs(s(0, j) - std::exp(1.0 + j) / denom) < 1e-15);
    }
}

TEST_CASE("softmax rows sum to one and shift by a constant is stable") {
    Rng rng(23);
    const Tensor<double> m = seeded_normal<double>({10, 12}, rng);
    const Tensor<double> s = kernels::softmax_rows(m);
    Tensor<double> shifted = m;
    for (int64_t i = 0; i < m.dim(0); ++i) {
        for (int64_t j = 0; j < m.dim(1); ++j) shifted(i, j) += 3.25;
    }
    const Tensor<double> s2 = kernels::softmax_rows(shifted);
    for (int64_t i = 0; i < m.dim(0); ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < m.dim(1); ++j) sum += s(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    CHECK(max_abs_diff(s, s2) < 1e-9);
}

TEST_CASE("kernels do not modify their inputs") {
    Rng rng(29);
    const Tensor<double> a = seeded_normal<double>({8, 8}, rng);
    const Tensor<double> b = seeded_normal<double>({8, 8}, rng);
    const Tensor<double> a_copy = a, b_copy = b;
    (void)kernels::matmul(a, b);
    (void)kernels::softmax_rows(a);
    CHECK(bit_equal(a, a_copy));
    CHECK(bit_equal(b, b_copy));
}

TEST_CASE("verification mode flags non-finite results") {
    const bool saved = finite_checks_enabled();
    set_finite_checks(true);
    const Tensor<double> big = Tensor<double>::full({2, 2}, 1e300);
    CHECK_THROWS_WITH_AS(kernels::matmul(big, big), doctest::Contains("non-finite"),
                         std::runtime_error);
    set_finite_checks(false);
    CHECK_NOTHROW(kernels::matmul(big, big));
    set_finite_checks(saved);
}

TEST_CASE("thread cap is adjustable") {
    const int saved = kernels::max_threads();
    kernels::set_max_threads(2);
    CHECK(kernels::max_threads() == 2);
    kernels::set_max_threads(saved);
}
