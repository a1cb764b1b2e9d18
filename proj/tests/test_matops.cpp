#include <catch_amalgamated.hpp>

#include <ivctl/matops.hpp>

#include "support.hpp"

using namespace ivctl;
using Catch::Approx;

namespace {

Mat m2(double a, double b, double c, double d) {
    Mat M(2, 2);
    M << a, b, c, d;
    return M;
}

Mat example5_A_minus_LC() {
    const auto cfg = test::load("example5");
    return cfg.A - *cfg.L * cfg.C;
}

}  // namespace

TEST_CASE("pos_part keeps nonnegative entries") {
    CHECK(pos_part(m2(1, -2, 0, 3)) == m2(1, 0, 0, 3));
    CHECK(pos_part(Mat::Zero(3, 4)) == Mat::Zero(3, 4));
}

TEST_CASE("pos_part of the benchmark observer error matrix matches an elementwise max") {
    const Mat M = example5_A_minus_LC();
    const Mat P = pos_part(M);
    for (int i = 0; i < M.rows(); ++i)
        for (int j = 0; j < M.cols(); ++j)
            CHECK(P(i, j) == std::max(M(i, j), 0.0));
}

TEST_CASE("neg_part is pos_part minus the matrix") {
    CHECK(neg_part(m2(1, -2, 0, 3)) == m2(0, 2, 0, 0));
    CHECK(neg_part(m2(1, 2, 0, 3)) == Mat::Zero(2, 2));
    std::mt19937_64 gen(11);
    const Mat M = test::random_mat(gen, 5, 5);
    CHECK(neg_part(M) == test::pos(M) - M);
    CHECK(neg_part(M).minCoeff() >= 0.0);
}

TEST_CASE("abs_mat is the elementwise absolute value") {
    Mat r(1, 2);
    r << 1, -2;
    Mat e(1, 2);
    e << 1, 2;
    CHECK(abs_mat(r) == e);
    std::mt19937_64 gen(12);
    const Mat M = test::random_mat(gen, 4, 6);
    CHECK(abs_mat(M) == abs_mat(Mat(-M)));
    const Mat X = example5_A_minus_LC();
    for (int i = 0; i < X.rows(); ++i)
        for (int j = 0; j < X.cols(); ++j)
            CHECK(abs_mat(X)(i, j) == std::fabs(X(i, j)));
}

TEST_CASE("sign_mat maps zero to +1") {
    CHECK(sign_mat(m2(0, -1, 2, 0)) == m2(1, -1, 1, 1));
    CHECK(sign_mat(m2(-1, -2, -3, -4)) == Mat::Constant(2, 2, -1.0));
    std::mt19937_64 gen(13);
    const Mat M = test::random_mat(gen, 6, 3);
    const Mat S = sign_mat(M);
    for (int i = 0; i < M.rows(); ++i)
        for (int j = 0; j < M.cols(); ++j)
            CHECK(S(i, j) == (M(i, j) >= 0.0 ? 1.0 : -1.0));
}

TEST_CASE("spectral_radius") {
    CHECK(spectral_radius(Mat::Identity(3, 3)) == Approx(1.0).epsilon(1e-12));
    Mat D = Mat::Zero(2, 2);
    D.diagonal() << 0.5, -0.2;
    CHECK(spectral_radius(D) == Approx(0.5).epsilon(1e-12));
    // The benchmark plant matrix is unstable.
    CHECK(spectral_radius(test::load("example5").A) > 1.0);
    CHECK_THROWS_AS(spectral_radius(Mat::Zero(2, 3)), DimensionError);
    // Rotation: complex pair of modulus 0.9.
    const double t = 0.7;
    CHECK(spectral_radius(0.9 * m2(std::cos(t), -std::sin(t), std::sin(t), std::cos(t))) ==
          Approx(0.9).epsilon(1e-9));
}

TEST_CASE("splitting identities hold on random matrices") {
    std::mt19937_64 gen(14);
    for (int trial = 0; trial < 200; ++trial) {
        const Mat M = test::random_mat(gen, 1 + trial % 7, 1 + trial % 5, 10.0);
        const Mat P = pos_part(M), N = neg_part(M);
        CHECK(P - N == M);
        CHECK(P.cwiseProduct(N) == Mat::Zero(M.rows(), M.cols()));
        CHECK(abs_mat(M) == P + N);
        // Idempotence on nonnegative inputs.
        const Mat A = abs_mat(M);
        CHECK(pos_part(A) == A);
        CHECK(abs_mat(A) == A);
        CHECK(neg_part(A) == Mat::Zero(M.rows(), M.cols()));
    }
}

TEST_CASE("spectral_radius is bounded by the infinity norm") {
    std::mt19937_64 gen(15);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + trial % 8;
        const Mat M = test::random_mat(gen, n, n, 3.0);
        double inf = 0.0;
        for (int i = 0; i < n; ++i)
            inf = std::max(inf, M.row(i).cwiseAbs().sum());
        CHECK(spectral_radius(M) <= inf * (1.0 + 1e-12));
        CHECK(inf_norm(M) == Approx(inf).epsilon(1e-14));
    }
}

TEST_CASE("IntervalVec validates its bounds") {
    Vec lo(2), hi(2);
    lo << 0, 1;
    hi << 1, 0;
    CHECK_THROWS(IntervalVec(lo, hi));
    CHECK_THROWS_AS(IntervalVec(Vec::Zero(2), Vec::Zero(3)), DimensionError);
    const auto b = IntervalVec::symmetric(3, 0.5);
    CHECK(b.width() == Vec::Constant(3, 1.0));
    CHECK(b.midpoint() == Vec::Zero(3));
    CHECK(b.contains(Vec::Constant(3, 0.5)));
    CHECK_FALSE(b.contains(Vec::Constant(3, 0.51)));
}

TEST_CASE("block_diag_repeat places copies on the diagonal") {
    const Mat M = m2(1, 2, 3, 4);
    const Mat D = block_diag_repeat(M, 3);
    REQUIRE(D.rows() == 6);
    CHECK(D.block(2, 2, 2, 2) == M);
    CHECK(D.block(0, 2, 2, 2) == Mat::Zero(2, 2));
}
