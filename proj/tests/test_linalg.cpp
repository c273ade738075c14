#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "sncbf/linalg.hpp"

using namespace sncbf;

TEST_CASE("cholesky of identity is identity") {
    const auto r = cholesky(Matrix::identity(2));
    REQUIRE(r.ok);
    CHECK(max_abs_diff(r.factor, Matrix::identity(2)) == 0.0);
}

TEST_CASE("cholesky of a 2x2 with known factor") {
    const Matrix A{{4, 2}, {2, 3}};
    const auto r = cholesky(A);
    REQUIRE(r.ok);
    CHECK(r.factor(0, 0) == doctest::Approx(2.0));
    CHECK(r.factor(1, 0) == doctest::Approx(1.0));
    CHECK(r.factor(1, 1) == doctest::Approx(std::sqrt(2.0)));
    CHECK(r.factor(0, 1) == 0.0);
    CHECK(max_abs_diff(r.factor * r.factor.transpose(), A) < 1e-12);
}

TEST_CASE("indefinite matrix is rejected") {
    const auto r = cholesky(Matrix{{1, 2}, {2, 1}});
    CHECK_FALSE(r.ok);
    CHECK(r.failed_at == 1);
    CHECK(r.min_pivot <= 0.0);
    CHECK_FALSE(log_det_pd(Matrix{{1, 2}, {2, 1}}).ok);
}

TEST_CASE("shape and symmetry preconditions") {
    CHECK_THROWS_AS(cholesky(Matrix(2, 3)), DimensionMismatch);
    CHECK_THROWS_AS(cholesky(Matrix{{1, 0.5}, {0.4, 1}}), DimensionMismatch);
    // Asymmetry within tolerance is accepted.
    CHECK(cholesky(Matrix{{1, 0.5}, {0.5 + 1e-12, 1}}).ok);
}

TEST_CASE("jitter shifts the diagonal") {
    const auto r = cholesky(Matrix{{0, 0}, {0, 0}}, 4.0);
    REQUIRE(r.ok);
    CHECK(r.factor(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("log det of simple matrices") {
    for (std::size_t n : {1u, 3u, 7u}) {
        const auto r = log_det_pd(Matrix::identity(n));
        REQUIRE(r.ok);
        CHECK(r.value == 0.0);
        const auto s = log_det_pd(Matrix::identity(n) * 3.5);
        CHECK(s.value == doctest::Approx(n * std::log(3.5)).epsilon(1e-14));
    }
    CHECK(log_det_pd(Matrix::diagonal({2, 8})).value == doctest::Approx(std::log(16.0)).epsilon(1e-14));
}

TEST_CASE("log det matches LU determinant on random SPD matrices") {
    oracle::Gen gen(101);
    for (int c = 0; c < 100; ++c) {
        const std::size_t n = gen.pick(2, 10);
        const Matrix A = gen.spd(n);
        const auto r = log_det_pd(A);
        REQUIRE(r.ok);
        const double det = oracle::lu_determinant(A);
        CHECK(std::fabs(std::exp(r.value) - det) / det < 1e-8);
    }
}

TEST_CASE("cholesky success iff leading minors positive") {
    oracle::Gen gen(7);
    int pd = 0, not_pd = 0;
    for (int c = 0; c < 400; ++c) {
        const std::size_t n = gen.pick(1, 5);
        Matrix A(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k <= i; ++k) A(i, k) = A(k, i) = gen.uniform(-1, 1);
        for (std::size_t i = 0; i < n; ++i) A(i, i) += gen.uniform(0, 2.5);
        const double jitter = gen.uniform(0, 0.3);
        Matrix J = A;
        for (std::size_t i = 0; i < n; ++i) J(i, i) += jitter;
        const bool expect = oracle::pd_by_minors(J);
        CHECK(cholesky(A, jitter).ok == expect);
        (expect ? pd : not_pd)++;
    }
    CHECK(pd > 50);
    CHECK(not_pd > 50);
}

TEST_CASE("cholesky_inverse inverts") {
    oracle::Gen gen(3);
    const Matrix A = gen.spd(6);
    const auto r = cholesky(A);
    REQUIRE(r.ok);
    CHECK(max_abs_diff(A * cholesky_inverse(r.factor), Matrix::identity(6)) < 1e-10);
}

TEST_CASE("block assembly") {
    const Matrix a{{1, 2}, {2, 5}};
    const Matrix b{{7}, {8}};
    const Matrix c{{9}};
    const Matrix M = symmetric_block_assemble({{a, b}, {b.transpose(), c}}, true);
    CHECK(M.rows() == 3);
    CHECK(M(0, 2) == 7);
    CHECK(M(2, 1) == 8);
    CHECK(M(2, 2) == 9);
    const Matrix Z = symmetric_block_assemble({{a, Matrix()}, {Matrix(), c}});
    CHECK(Z(0, 2) == 0.0);
    CHECK(Z(2, 2) == 9);
    CHECK_THROWS_AS(symmetric_block_assemble({{a, b}, {b, c}}), DimensionMismatch);
    CHECK_THROWS_AS(symmetric_block_assemble({{a, b}, {Matrix{{7, 9}}, c}}, true), DimensionMismatch);
}

TEST_CASE("matrix arithmetic dimension checks") {
    CHECK_THROWS_AS(Matrix(2, 3) * Matrix(2, 3), DimensionMismatch);
    CHECK_THROWS_AS(Matrix(2, 3) + Matrix(3, 2), DimensionMismatch);
    CHECK_THROWS_AS(Matrix(2, 3) * std::vector<double>(2), DimensionMismatch);
}
