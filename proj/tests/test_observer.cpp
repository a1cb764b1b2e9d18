#include <catch_amalgamated.hpp>

#include <ivctl/observer.hpp>

#include "support.hpp"

using namespace ivctl;
using Catch::Approx;

namespace {

SystemModel scalar_model(double a, double wr, double vr) {
    SystemModel m{"s",
                  Mat::Constant(1, 1, a),
                  Mat::Zero(1, 1),
                  Mat::Identity(1, 1),
                  Mat::Zero(1, 1),
                  Mat::Identity(1, 1),
                  Mat::Identity(1, 1),
                  zero_map(1, 1),
                  zero_map(1, 1),
                  IntervalVec::symmetric(1, wr),
                  IntervalVec::symmetric(1, vr),
                  IntervalVec::symmetric(1, 1.0)};
    m.validate();
    return m;
}

ObserverGain gain(double l) { return {Mat::Constant(1, 1, l)}; }

// Framer step for the benchmark, written from the definition with explicit
// positive/negative parts and the hand-coded decomposition functions.
FramerState example5_framer(const ModelConfig& c, const Mat& L, const FramerState& fs, const Vec& y, const Vec& u) {
    const Mat M = c.A - L * c.C;
    const Mat LV = L * c.V;
    const Vec phi_hi = test::example5_phi_d(fs.hi, fs.lo), phi_lo = test::example5_phi_d(fs.lo, fs.hi);
    const Vec psi_hi = test::example5_psi_d(fs.hi, fs.lo), psi_lo = test::example5_psi_d(fs.lo, fs.hi);
    const Vec& wh = c.w_box.hi;
    const Vec& wl = c.w_box.lo;
    const Vec& vh = c.v_box.hi;
    const Vec& vl = c.v_box.lo;
    const Vec base = L * y + (c.B - L * c.D) * u;
    FramerState n;
    n.hi = test::pos(M) * fs.hi - test::neg(M) * fs.lo + test::neg(LV) * vh - test::pos(LV) * vl + phi_hi + base +
           test::pos(c.W) * wh - test::neg(c.W) * wl + test::neg(L) * psi_hi - test::pos(L) * psi_lo;
    n.lo = test::pos(M) * fs.lo - test::neg(M) * fs.hi + test::neg(LV) * vl - test::pos(LV) * vh + phi_lo + base +
           test::pos(c.W) * wl - test::neg(c.W) * wh + test::neg(L) * psi_lo - test::pos(L) * psi_hi;
    return n;
}

struct FramerRun {
    bool contained = true;
    bool ordered = true;
    bool dominated = true;
    std::vector<Vec> widths;
};

// Plant and framer side by side under a random input sequence.
FramerRun run_framer(const SystemModel& model, const Decompositions& dec, const ObserverGain& L, int horizon,
                     std::uint64_t seed, NoiseScheme scheme = NoiseScheme::Uniform) {
    Rng rw(seed, Stream::ProcessNoise), rv(seed, Stream::MeasurementNoise), ru(seed, Stream::InitialState);
    Vec x = sample_noise(model.x0_box, ru, NoiseScheme::Uniform);
    FramerState fs = FramerState::from_box(model.x0_box);
    FramerRun r;
    r.widths.push_back(fs.width());
    const auto input_box = IntervalVec::symmetric(model.m(), 1.0);
    for (int k = 0; k < horizon; ++k) {
        const Vec w = sample_noise(model.w_box, rw, scheme), v = sample_noise(model.v_box, rv, scheme);
        const Vec u = sample_noise(input_box, ru, NoiseScheme::Uniform);
        const auto out = plant_step(model, x, u, w, v);
        const Vec bound = framer_error_step(model, dec.F_phi, dec.F_psi, L, fs.width());
        fs = framer_step(model, dec, L, fs, out.y, u);
        x = out.x_next;
        if (!fs.contains(x))
            r.contained = false;
        if (!fs.ordered())
            r.ordered = false;
        if ((bound - fs.width()).minCoeff() < -1e-9 * (1.0 + bound.cwiseAbs().maxCoeff()))
            r.dominated = false;
        r.widths.push_back(fs.width());
        if (x.cwiseAbs().maxCoeff() > 1e8)
            break;
    }
    return r;
}

}  // namespace

TEST_CASE("framer_step scalar hand evaluation") {
    const auto m = scalar_model(0.5, 0.1, 0.1);
    const auto dec = decompose_model(m, 1e-3);
    const auto next = framer_step(m, dec, gain(0.1), {Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)}, Vec::Zero(1),
                                  Vec::Zero(1));
    CHECK(next.hi[0] == Approx(0.51));
    CHECK(next.lo[0] == Approx(-0.51));
}

TEST_CASE("framer_step fixed point of a zero model") {
    SystemModel z{"z", Mat::Zero(2, 2), Mat::Zero(2, 1), Mat::Zero(1, 2), Mat::Zero(1, 1), Mat::Zero(2, 2),
                  Mat::Zero(1, 1), zero_map(2, 2), zero_map(2, 1), IntervalVec::symmetric(2, 0.0),
                  IntervalVec::symmetric(1, 0.0), IntervalVec::symmetric(2, 0.0)};
    const auto dec = decompose_model(z, 1e-3);
    const auto next = framer_step(z, dec, {Mat::Zero(2, 1)}, {Vec::Zero(2), Vec::Zero(2)}, Vec::Zero(1), Vec::Zero(1));
    CHECK(next.hi == Vec::Zero(2));
    CHECK(next.lo == Vec::Zero(2));
}

TEST_CASE("framer_step on the benchmark matches the hand-coded framer") {
    const auto cfg = test::load("example5");
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const FramerState fs{Vec::Constant(5, 6.0), Vec::Constant(5, -6.0)};
    std::mt19937_64 gen(41);
    for (int k = 0; k < 10; ++k) {
        const Vec y = test::random_vec(gen, 2, 3.0), u = test::random_vec(gen, 3);
        const auto a = framer_step(model, dec, {*cfg.L}, fs, y, u);
        const auto b = example5_framer(cfg, *cfg.L, fs, y, u);
        CHECK(test::max_abs(a.hi - b.hi) < 1e-12);
        CHECK(test::max_abs(a.lo - b.lo) < 1e-12);
    }
}

TEST_CASE("framer_error_step") {
    const auto z = scalar_model(0.5, 0.0, 0.0);
    const Mat F0 = Mat::Zero(1, 1);
    CHECK(framer_error_step(z, F0, F0, gain(0.1), Vec::Zero(1)) == Vec::Zero(1));
    const auto m = scalar_model(0.5, 0.1, 0.1);
    CHECK(framer_error_step(m, F0, F0, gain(0.1), Vec::Ones(1))[0] == Approx(0.62));
}

TEST_CASE("verify_observer_gain") {
    // C = I and L = A cancel the error dynamics.
    auto cfg = test::load("linear2d");
    SystemModel m = cfg.model();
    m.C = Mat::Identity(2, 2);
    m.D = Mat::Zero(2, 1);
    m.V = Mat::Identity(2, 2);
    m.v_box = IntervalVec::symmetric(2, 0.1);
    m.psi = zero_map(2, 2);
    const Mat F0 = Mat::Zero(2, 2);
    const auto r = verify_observer_gain(m, F0, F0, {m.A});
    CHECK(r.radius_ML == Approx(0.0).margin(1e-12));
    CHECK(r.iss);

    const auto e5 = test::load("example5");
    const auto model = e5.model();
    const auto dec = e5.decompositions();
    const auto bundled = verify_observer_gain(model, dec.F_phi, dec.F_psi, {*e5.L});
    CHECK(bundled.M_L.rows() == 5);
    CHECK(std::isfinite(bundled.radius_ML));
    const auto zero = verify_observer_gain(model, dec.F_phi, dec.F_psi, {Mat::Zero(5, 2)});
    CHECK(zero.radius_ML == Approx(spectral_radius(abs_mat(e5.A) + dec.F_phi)).epsilon(1e-12));
    CHECK(zero.radius_ML > 1.0);
    CHECK_FALSE(zero.iss);
}

TEST_CASE("search_observer_gain") {
    auto cfg = test::load("linear2d");
    SystemModel m = cfg.model();
    m.C = Mat::Identity(2, 2);
    m.D = Mat::Zero(2, 1);
    m.V = Mat::Identity(2, 2);
    m.v_box = IntervalVec::symmetric(2, 0.1);
    m.psi = zero_map(2, 2);
    const Mat F0 = Mat::Zero(2, 2);
    const auto r = search_observer_gain(m, F0, F0, 100);
    CHECK(r.success);
    CHECK(r.radius < 1e-9);

    const auto s = scalar_model(2.0, 0.1, 0.1);
    const Mat z = Mat::Zero(1, 1);
    const auto rs = search_observer_gain(s, z, z, 200);
    CHECK(rs.success);
    CHECK(rs.gain.L(0, 0) > 1.0);
    CHECK(rs.gain.L(0, 0) < 3.0);
    CHECK(rs.radius < 1.0);
}

TEST_CASE("search_observer_gain on the benchmark reports its best radius") {
    const auto e5 = test::load("example5");
    const auto dec = e5.decompositions();
    const auto r = search_observer_gain(e5.model(), dec.F_phi, dec.F_psi, 4000, 1);
    CHECK(r.evaluations <= 4000);
    CHECK(std::isfinite(r.radius));
    CHECK(r.success == (r.radius < 1.0));
    CHECK(r.radius == Approx(spectral_radius(framer_error_matrix(e5.model(), dec.F_phi, dec.F_psi, r.gain))));
    UNSCOPED_INFO("best rho(M_L) found: " << r.radius);
    // Same seed, same answer.
    const auto again = search_observer_gain(e5.model(), dec.F_phi, dec.F_psi, 4000, 1);
    CHECK(again.gain.L == r.gain.L);
}

TEST_CASE("framer contains the state on the benchmark") {
    const auto e5 = test::load("example5");
    const auto model = e5.model();
    const auto dec = e5.decompositions();
    for (int r = 0; r < 100; ++r) {
        const auto run = run_framer(model, dec, {*e5.L}, 100, derive_seed(5, r));
        REQUIRE(run.contained);
        REQUIRE(run.ordered);
    }
}

TEST_CASE("framer contains the state on random stable toy systems") {
    std::mt19937_64 gen(42);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 3;
        Mat A = test::random_mat(gen, n, n);
        A *= 0.8 / std::max(spectral_radius(A), 1e-9);
        Expression phi(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double c = 0.05 * (1 + i);
            phi[static_cast<std::size_t>(i)] = {{c, TermKind::Sin, (i + 1) % n}, {-c, TermKind::Lin, (i + 1) % n}};
        }
        SystemModel m{"toy",
                      A,
                      test::random_mat(gen, n, 1),
                      test::random_mat(gen, 1, n),
                      Mat::Zero(1, 1),
                      Mat::Identity(n, n),
                      Mat::Identity(1, 1),
                      make_expression_map(phi, n),
                      make_expression_map({{{0.05, TermKind::Cos, 0}, {0.05, TermKind::Lin, 0}}}, n),
                      IntervalVec::symmetric(n, 0.05),
                      IntervalVec::symmetric(1, 0.05),
                      IntervalVec::symmetric(n, 2.0)};
        m.validate();
        const auto dec = decompose_model(m, 1e-3);
        const ObserverGain L{test::random_mat(gen, n, 1, 0.3)};
        for (int r = 0; r < 100; ++r) {
            const auto run = run_framer(m, dec, L, 100, derive_seed(trial, r),
                                        r % 2 ? NoiseScheme::Extreme : NoiseScheme::Uniform);
            REQUIRE(run.contained);
            REQUIRE(run.ordered);
            REQUIRE(run.dominated);
        }
    }
}

TEST_CASE("widths are dominated by the comparison bound on the benchmark") {
    const auto e5 = test::load("example5");
    const auto dec = e5.decompositions();
    for (int r = 0; r < 20; ++r)
        CHECK(run_framer(e5.model(), dec, {*e5.L}, 30, derive_seed(6, r)).dominated);
}

TEST_CASE("ISS gain with zero-width noise shrinks widths geometrically") {
    auto cfg = test::load("linear2d");
    cfg.w_box = IntervalVec::symmetric(static_cast<int>(cfg.W.cols()), 0.0);
    cfg.v_box = IntervalVec::symmetric(static_cast<int>(cfg.V.cols()), 0.0);
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const ObserverGain L{*cfg.L};
    const auto rep = verify_observer_gain(model, dec.F_phi, dec.F_psi, L);
    REQUIRE(rep.iss);
    // Widths are measured while they are still far above the rounding level
    // of the state itself.
    const auto run = run_framer(model, dec, L, 30, 3);
    REQUIRE(run.widths.size() == 31);
    const double ratio = run.widths[30].maxCoeff() / run.widths[10].maxCoeff();
    CHECK(ratio > 0.0);
    CHECK(std::pow(ratio, 1.0 / 20.0) <= rep.radius_ML + 0.01);
}
