#include <catch_amalgamated.hpp>

#include <ivctl/synthesis.hpp>

#include "support.hpp"

using namespace ivctl;
using Catch::Approx;

namespace {

ControllerGains random_gains(std::mt19937_64& gen, int n, int m, double scale) {
    return {test::random_mat(gen, n, n, scale), test::random_mat(gen, n, n, scale), test::random_mat(gen, n, n, scale),
            test::random_mat(gen, m, n, scale), test::random_mat(gen, m, n, scale), test::random_mat(gen, m, n, scale),
            test::random_mat(gen, n, n, scale), test::random_mat(gen, m, n, scale)};
}

// Stacked gain written out slot by slot.
Mat stack_gains(const ControllerGains& g, const Mat& F) {
    const Mat* slots[] = {&g.A_c, &g.Kb_hi, &g.Kb_lo, &g.C_c, &g.Kd_hi, &g.Kd_lo};
    const auto n = g.A_c.cols();
    Mat K(4 * n + 4 * g.C_c.rows(), n);
    Eigen::Index r = 0;
    for (const Mat* s : slots) {
        K.middleRows(r, s->rows()) = *s;
        r += s->rows();
    }
    K.middleRows(r, n) = g.Kx_nu * F;
    r += n;
    K.middleRows(r, g.Ku_nu.rows()) = g.Ku_nu * F;
    return K;
}

// B^ diag5(K) by explicit block loops.
Mat selector_times_gain(const Mat& Bh, const Mat& K) {
    const auto h = K.rows(), n = K.cols();
    Mat out = Mat::Zero(Bh.rows(), 5 * n);
    for (int j = 0; j < 5; ++j)
        for (Eigen::Index r = 0; r < Bh.rows(); ++r)
            for (Eigen::Index c = 0; c < n; ++c) {
                double s = 0.0;
                for (Eigen::Index k = 0; k < h; ++k)
                    s += Bh(r, j * h + k) * K(k, c);
                out(r, j * n + c) = s;
            }
    return out;
}

// The three synthesis blocks assembled from scratch, full symmetric storage.
std::array<Mat, 3> reference_blocks(const ComparisonSystem& cs, double alpha, double eps, const DecisionVars& v) {
    const auto N = cs.A_hat.rows(), nt = cs.Lambda.cols();
    const Mat I = Mat::Identity(N, N), Z = Mat::Zero(N, N);
    const Mat X = v.Q * cs.A_hat.transpose() + v.Theta * cs.B_hat.transpose();
    Mat L1(4 * N, 4 * N);
    L1 << v.Gamma - v.Q, v.Q, X, Z,
          v.Q, -alpha * I, Z, Z,
          X.transpose(), Z, -0.5 * v.Q, v.Q,
          Z, Z, v.Q, v.Q - 2.0 * eps * v.Gamma;
    Mat L2(nt + 2 * N, nt + 2 * N);
    L2 << -v.mu * Mat::Identity(nt, nt), cs.Lambda.transpose(), cs.Lambda.transpose(),
          cs.Lambda, -0.5 * v.Q, Z,
          cs.Lambda, Z, -v.Gamma;
    Mat L3(2 * N, 2 * N);
    L3 << I, v.Q, v.Q, v.Gamma;
    return {L1, L2, L3};
}

double max_eig(const Mat& M) { return Eigen::SelfAdjointEigenSolver<Mat>(M).eigenvalues().maxCoeff(); }
double min_eig(const Mat& M) { return Eigen::SelfAdjointEigenSolver<Mat>(M).eigenvalues().minCoeff(); }

struct ScalarFixture {
    ModelConfig cfg = test::load("scalar");
    SystemModel model = cfg.model();
    Decompositions dec = cfg.decompositions();
    ObserverGain L = *cfg.observer();
};

}  // namespace

TEST_CASE("comparison matrix with zero gains is the constant part") {
    const auto cfg = test::load("example5");
    const auto cs = build_comparison(cfg.model(), cfg.decompositions(), *cfg.observer(), ControllerGains::zero(5, 3));
    CHECK(cs.A_tilde == cs.A_hat);
    CHECK(cs.A_tilde.rows() == 25);
    CHECK(cs.Lambda.rows() == 25);
    CHECK(cs.Lambda.cols() == 21);
}

TEST_CASE("comparison matrix is affine in the stacked gain") {
    const auto cfg = test::load("example5");
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    std::mt19937_64 gen(71);
    for (int k = 0; k < 100; ++k) {
        const auto g = random_gains(gen, 5, 3, 2.0);
        const auto cs = build_comparison(model, dec, *cfg.observer(), g);
        const Mat lhs = cs.A_tilde - cs.A_hat;
        const Mat rhs = selector_times_gain(cs.B_hat, stack_gains(g, dec.F_phi));
        REQUIRE(test::max_abs(lhs - rhs) < 1e-12 * (1.0 + test::max_abs(cs.A_tilde)));
        REQUIRE(test::max_abs(pack_gains(g, dec.F_phi) - stack_gains(g, dec.F_phi)) == 0.0);
    }
}

TEST_CASE("upper-left block is the observer comparison matrix and ignores the gains") {
    const auto cfg = test::load("example5");
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const auto rep = verify_observer_gain(model, dec.F_phi, dec.F_psi, *cfg.observer());
    const auto bundled = build_comparison(model, dec, *cfg.observer(), *cfg.gains);
    CHECK(bundled.A_tilde.topLeftCorner(10, 10) == rep.A_u);
    CHECK(bundled.A_tilde.topRightCorner(10, 15) == Mat::Zero(10, 15));

    std::mt19937_64 gen(72);
    for (int k = 0; k < 100; ++k) {
        const auto cs = build_comparison(model, dec, *cfg.observer(), random_gains(gen, 5, 3, 1.0));
        REQUIRE(cs.A_tilde.topLeftCorner(10, 10) == rep.A_u);
        // Block lower triangular: every eigenvalue of A_u is an eigenvalue of A~.
        const auto full = eigenvalues(cs.A_tilde);
        const auto sub = eigenvalues(rep.A_u);
        for (Eigen::Index i = 0; i < sub.size(); ++i) {
            double best = 1e300;
            for (Eigen::Index j = 0; j < full.size(); ++j)
                best = std::min(best, std::abs(sub[i] - full[j]));
            REQUIRE(best < 1e-8);
        }
    }
}

TEST_CASE("assemble_sdp sizes and epsilon") {
    const auto cfg = test::load("example5");
    const auto dec = cfg.decompositions();
    const auto cs = build_comparison(cfg.model(), dec, *cfg.observer(), ControllerGains::zero(5, 3));
    const auto p = assemble_sdp(cs, 0.1, dec.gamma());
    CHECK(p.epsilon == Approx(26.6854).margin(5e-5));
    CHECK(epsilon_of(0.1, 0.601) == Approx(1.0 / (0.1 * 0.601 * 0.601) - 1.0));
    CHECK(p.block_dims() == std::array<int, 3>{100, 71, 50});
    CHECK_THROWS(assemble_sdp(cs, 1.0, 1.0));
    CHECK_THROWS(assemble_sdp(cs, 0.0, 0.5));
}

TEST_CASE("nearly trivial comparison system is feasible with small attenuation") {
    // A = C = L = W = 0 leaves only the regularization eps0 I in A~ and
    // nothing in Lambda.
    const double e0 = 0.05;
    SystemModel m{"quiet", Mat::Zero(1, 1), Mat::Ones(1, 1), Mat::Zero(1, 1), Mat::Zero(1, 1), Mat::Zero(1, 1),
                  Mat::Zero(1, 1), zero_map(1, 1), zero_map(1, 1), IntervalVec::symmetric(1, 0.1),
                  IntervalVec::symmetric(1, 0.1), IntervalVec::symmetric(1, 1.0)};
    const auto dec = decompose_model(m, e0);
    const auto cs = build_comparison(m, dec, {Mat::Zero(1, 1)}, ControllerGains::zero(1, 1));
    CHECK(test::max_abs(cs.Lambda) == 0.0);
    const auto s = solve_sdp(assemble_sdp(cs, 0.5, dec.gamma()), sdp::solver_by_name("ipm"));
    REQUIRE(s.feasible());
    CHECK(s.mu_star < 1e-3);
    CHECK(s.residuals.pass());
}

TEST_CASE("solver output satisfies independently assembled blocks") {
    ScalarFixture f;
    const auto cs = build_comparison(f.model, f.dec, f.L, ControllerGains::zero(1, 1));
    for (auto mode : {ThetaMode::Free, ThetaMode::Structured}) {
        const auto p = assemble_sdp(cs, 0.5, f.dec.gamma(), mode);
        const auto s = solve_sdp(p, sdp::solver_by_name("ipm"));
        REQUIRE(s.feasible());
        const auto B = reference_blocks(cs, p.alpha, p.epsilon, s.vars);
        CHECK(max_eig(B[0]) < kResidualTol);
        CHECK(max_eig(B[1]) < kResidualTol);
        CHECK(min_eig(B[2]) > -kResidualTol);
        // Schur complement of the coupling block.
        CHECK(min_eig(s.vars.Gamma - s.vars.Q * s.vars.Q) > -kResidualTol);
        CHECK(s.residuals.schur_min_eig > -kResidualTol);
    }
}

TEST_CASE("recover_gains inverts the gain substitution") {
    const auto cfg = test::load("example5");
    const auto dec = cfg.decompositions();
    const auto cs = build_comparison(cfg.model(), dec, *cfg.observer(), ControllerGains::zero(5, 3));
    // The disturbance slots pass through F_phi^-1, whose conditioning sets
    // the attainable accuracy for those two gains.
    const double cond_F = Eigen::JacobiSVD<Mat>(dec.F_phi).singularValues()(0) /
                          Eigen::JacobiSVD<Mat>(dec.F_phi).singularValues()(4);
    std::mt19937_64 gen(73);
    for (int k = 0; k < 10; ++k) {
        const auto g = random_gains(gen, 5, 3, 1.0);
        const Mat R = test::random_mat(gen, 25, 25, 0.1);
        DecisionVars v;
        v.Q = R * R.transpose() + Mat::Identity(25, 25);
        v.Theta = v.Q * block_diag_repeat(pack_gains(g, dec.F_phi), 5).transpose();
        const auto r = recover_gains(v, cs, dec.F_phi);
        CHECK(r.structured());
        CHECK(r.replica_deviation < 1e-10);
        for (const auto& [a, b] : {std::pair{&r.gains.A_c, &g.A_c}, {&r.gains.Kb_hi, &g.Kb_hi}, {&r.gains.Kb_lo, &g.Kb_lo},
                                   {&r.gains.C_c, &g.C_c}, {&r.gains.Kd_hi, &g.Kd_hi}, {&r.gains.Kd_lo, &g.Kd_lo}})
            CHECK(test::max_abs(*a - *b) < 1e-10);
        CHECK(test::max_abs(r.gains.Kx_nu - g.Kx_nu) < 1e-10 * cond_F);
        CHECK(test::max_abs(r.gains.Ku_nu - g.Ku_nu) < 1e-10 * cond_F);
    }
    // With F = I the stacked disturbance slots are the gains themselves.
    const auto g = random_gains(gen, 2, 1, 1.0);
    const auto back = unpack_gains(pack_gains(g, Mat::Identity(2, 2)), Mat::Identity(2, 2), 2, 1);
    CHECK(back.Kx_nu == g.Kx_nu);
    CHECK(back.Ku_nu == g.Ku_nu);
}

TEST_CASE("scalar synthesis end to end") {
    ScalarFixture f;
    const auto res = synthesize(f.model, f.dec, f.L, 0.5, sdp::solver_by_name("ipm"));
    REQUIRE(res.success());
    CHECK(res.final_stage().mode == ThetaMode::Structured);
    CHECK(res.gamma == Approx(0.1));
    CHECK(res.epsilon == Approx(199.0));
    const auto& g = res.recovered->gains;
    CHECK(g.A_c.rows() == 1);
    CHECK(g.C_c.rows() == 1);

    // The certificate is searched with the gains fixed.
    const auto cert = find_certificate(f.model, f.dec, f.L, g, res.alpha, res.epsilon, sdp::solver_by_name("ipm"));
    REQUIRE(cert.report.certified);
    CHECK(cert.report.A_tilde_radius < 1.0);
    const auto check = verify_certified_gains(f.model, f.dec, f.L, g, cert.P, cert.mu, res.alpha, res.epsilon);
    CHECK(check.certified);

    // Ten times one entry breaks at least one inequality.
    auto bad = g;
    const double big = 10.0 * std::max(std::abs(bad.A_c(0, 0)), 1.0);
    bad.A_c(0, 0) += big;
    const auto broken = verify_certified_gains(f.model, f.dec, f.L, bad, cert.P, cert.mu, res.alpha, res.epsilon);
    CHECK_FALSE(broken.certified);
}

TEST_CASE("certificate blocks of the trivial system") {
    const Mat Z = Mat::Zero(2, 2);
    const auto B = certificate_blocks(Z, Mat::Zero(2, 3), Mat::Identity(2, 2), 1.0, 0.5, 3.0);
    Vec d(7);
    d << -1, -1, -1, -0.5, -0.5, -1, -1;
    CHECK(B[1] == Mat(d.asDiagonal()));
    CHECK(max_sym_eig(B[1]) < 0.0);
}

TEST_CASE("attenuation_check") {
    const std::vector<Vec> zero(5, Vec::Zero(3));
    const auto r = attenuation_check(zero, zero, 1.0);
    CHECK(r.max_step_ratio == 0.0);
    CHECK(r.cumulative_ratio == 0.0);
    CHECK(r.samples == 5);
    CHECK_THROWS(attenuation_check(zero, std::vector<Vec>(4, Vec::Zero(3)), 1.0));
}

TEST_CASE("attenuation ratio is scale invariant in the near-linear regime") {
    // Zero start, zero initial width and small noise keep sin x close to x,
    // so doubling every noise bound doubles z and leaves the ratio unchanged.
    ScalarFixture f;
    const auto res = synthesize(f.model, f.dec, f.L, 0.5, sdp::solver_by_name("ipm"));
    REQUIRE(res.success());
    double ratios[2];
    for (int s = 0; s < 2; ++s) {
        auto cfg = f.cfg;
        const double k = 0.01 * (s + 1.0);
        cfg.w_box = IntervalVec(k * f.cfg.w_box.lo, k * f.cfg.w_box.hi);
        cfg.v_box = IntervalVec(k * f.cfg.v_box.lo, k * f.cfg.v_box.hi);
        cfg.x0_box = IntervalVec::point(Vec::Zero(1));
        const auto model = cfg.model();
        const auto t = simulate_closed_loop(model, f.dec, f.L, res.recovered->gains, 100, 5);
        const auto [z, eta] = augmented_signals(model, t);
        ratios[s] = attenuation_check(z, eta, res.final_stage().mu_star).cumulative_ratio;
    }
    CHECK(ratios[1] <= ratios[0] * (1.0 + 1e-6));
    CHECK(ratios[1] == Approx(ratios[0]).epsilon(1e-6));
    CHECK(ratios[0] <= res.final_stage().mu_star);
}

TEST_CASE("lambda is Lipschitz with constant gamma") {
    const auto cfg = test::load("example5");
    const auto dec = cfg.decompositions();
    const auto cs = build_comparison(cfg.model(), dec, *cfg.observer(), ControllerGains::zero(5, 3));
    std::mt19937_64 gen(74);
    for (int k = 0; k < 2000; ++k) {
        const Vec a = test::random_vec(gen, 25, 5.0);
        const Vec b = a + test::random_vec(gen, 25, k % 2 ? 0.01 : 3.0);
        const double lhs = (cs.lambda(a) - cs.lambda(b)).cwiseAbs().maxCoeff();
        REQUIRE(lhs <= dec.gamma() * (a - b).cwiseAbs().maxCoeff() * (1.0 + 1e-12) + 1e-15);
    }
}
