#include <catch_amalgamated.hpp>

#include <ivctl/plant.hpp>

#include "support.hpp"

using namespace ivctl;
using Catch::Approx;

namespace {

SystemModel scalar_linear(double a) {
    SystemModel m{"lin",
                  Mat::Constant(1, 1, a),
                  Mat::Zero(1, 1),
                  Mat::Identity(1, 1),
                  Mat::Zero(1, 1),
                  Mat::Identity(1, 1),
                  Mat::Identity(1, 1),
                  zero_map(1, 1),
                  zero_map(1, 1),
                  IntervalVec::symmetric(1, 0.1),
                  IntervalVec::symmetric(1, 0.1),
                  IntervalVec::symmetric(1, 1.0)};
    m.validate();
    return m;
}

SystemModel zero_model(int n, int m, int l) {
    SystemModel s{"zero",          Mat::Zero(n, n), Mat::Zero(n, m), Mat::Zero(l, n),
                  Mat::Zero(l, m), Mat::Zero(n, n), Mat::Zero(l, l), zero_map(n, n),
                  zero_map(n, l),  IntervalVec::symmetric(n, 0.0), IntervalVec::symmetric(l, 0.0),
                  IntervalVec::symmetric(n, 0.0)};
    s.validate();
    return s;
}

}  // namespace

TEST_CASE("plant_step") {
    const auto z = zero_model(2, 1, 1);
    const auto out = plant_step(z, Vec::Ones(2), Vec::Ones(1), Vec::Zero(2), Vec::Zero(1));
    CHECK(out.x_next == Vec::Zero(2));
    CHECK(out.y == Vec::Zero(1));

    const auto s = scalar_linear(0.5);
    const auto r = plant_step(s, Vec::Constant(1, 2.0), Vec::Zero(1), Vec::Constant(1, 0.1), Vec::Zero(1));
    CHECK(r.x_next[0] == Approx(1.1));
    CHECK(r.y[0] == Approx(2.0));
}

TEST_CASE("plant_step on the benchmark matches a hand-coded evaluation") {
    const auto cfg = test::load("example5");
    const auto model = cfg.model();
    std::mt19937_64 gen(31);
    for (int k = 0; k < 20; ++k) {
        const Vec x = test::random_vec(gen, 5, 6.0), u = test::random_vec(gen, 3);
        const Vec w = test::random_vec(gen, 5, 0.1), v = test::random_vec(gen, 2, 0.1);
        const auto out = plant_step(model, x, u, w, v);
        Vec xn = test::example5_phi(x) + w, y = test::example5_psi(x) + v;
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 5; ++j)
                xn[i] += cfg.A(i, j) * x[j];
            for (int j = 0; j < 3; ++j)
                xn[i] += cfg.B(i, j) * u[j];
        }
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 5; ++j)
                y[i] += cfg.C(i, j) * x[j];
            for (int j = 0; j < 3; ++j)
                y[i] += cfg.D(i, j) * u[j];
        }
        CHECK(test::max_abs(out.x_next - xn) < 1e-13);
        CHECK(test::max_abs(out.y - y) < 1e-13);
    }
}

TEST_CASE("plant_step rejects noise outside its box and bad shapes") {
    const auto s = scalar_linear(0.5);
    CHECK_THROWS_AS(plant_step(s, Vec::Zero(1), Vec::Zero(1), Vec::Constant(1, 0.2), Vec::Zero(1)), NoiseOutOfBox);
    CHECK_THROWS_AS(plant_step(s, Vec::Zero(2), Vec::Zero(1), Vec::Zero(1), Vec::Zero(1)), DimensionError);
}

TEST_CASE("model validation reports every problem") {
    auto m = scalar_linear(0.5);
    m.C = Mat::Zero(1, 3);
    m.W = Mat::Zero(2, 1);
    const auto p = m.problems();
    CHECK(p.size() >= 2);
    CHECK_THROWS_AS(m.validate(), DimensionError);
}

TEST_CASE("sample_noise") {
    const auto box = IntervalVec::symmetric(2, 0.1);
    CHECK(sample_noise(box, 5, NoiseScheme::Zero) == Vec::Zero(2));
    Rng rng(6);
    for (int k = 0; k < 100; ++k) {
        const Vec e = sample_noise(box, rng, NoiseScheme::Extreme);
        for (int i = 0; i < 2; ++i)
            CHECK((e[i] == 0.1 || e[i] == -0.1));
        const Vec u = sample_noise(box, rng, NoiseScheme::Uniform);
        CHECK(box.contains(u));
    }
    CHECK(sample_noise(box, 7, NoiseScheme::Uniform) == sample_noise(box, 7, NoiseScheme::Uniform));
    CHECK(sample_noise(box, 7, NoiseScheme::Uniform) != sample_noise(box, 8, NoiseScheme::Uniform));
    CHECK(parse_noise_scheme("extreme") == NoiseScheme::Extreme);
    CHECK_FALSE(parse_noise_scheme("gaussian").has_value());
}

TEST_CASE("stable linear model decays at its spectral radius") {
    const auto s = scalar_linear(0.5);
    SimOptions opt;
    opt.noise = NoiseScheme::Zero;
    opt.x0 = Vec::Constant(1, 1.0);
    const auto t = simulate(s, zero_input(1), 30, 1, opt);
    REQUIRE(t.states.size() == 31);
    for (int k = 1; k <= 30; ++k)
        CHECK(t.states[k][0] / t.states[k - 1][0] == Approx(spectral_radius(s.A)).epsilon(1e-12));
}

TEST_CASE("benchmark open loop diverges") {
    const auto cfg = test::load("example5");
    const auto model = cfg.model();
    SimOptions opt;
    opt.x0_mode = InitialState::Uniform;
    int over = 0;
    for (int r = 0; r < 20; ++r) {
        const auto t = simulate(model, zero_input(3), 100, derive_seed(1, r), opt);
        if (t.max_state_norm() > 1e6)
            ++over;
    }
    CHECK(over > 0);
    // From a large start the growth is monotone after a transient.
    opt.x0 = Vec::Constant(5, 6.0);
    const auto t = simulate(model, zero_input(3), 100, 1, opt);
    CHECK(t.max_state_norm() > 1e6);
    for (std::size_t k = 40; k < t.states.size(); ++k)
        CHECK(t.states[k].cwiseAbs().maxCoeff() > t.states[k - 20].cwiseAbs().maxCoeff());
}

TEST_CASE("simulate is deterministic and keeps noise in its boxes") {
    const auto model = test::load("example5").model();
    for (auto scheme : {NoiseScheme::Uniform, NoiseScheme::Extreme}) {
        SimOptions opt;
        opt.noise = scheme;
        opt.x0_mode = InitialState::Uniform;
        const auto a = simulate(model, zero_input(3), 60, 99, opt);
        const auto b = simulate(model, zero_input(3), 60, 99, opt);
        REQUIRE(a.states.size() == b.states.size());
        for (std::size_t k = 0; k < a.states.size(); ++k)
            CHECK(a.states[k] == b.states[k]);
        for (std::size_t k = 0; k < a.w.size(); ++k) {
            CHECK(model.w_box.contains(a.w[k]));
            CHECK(model.v_box.contains(a.v[k]));
        }
        CHECK(model.x0_box.contains(a.states[0]));
    }
}

TEST_CASE("divergence guard truncates runaway runs") {
    const auto s = scalar_linear(10.0);
    SimOptions opt;
    opt.noise = NoiseScheme::Zero;
    opt.x0 = Vec::Constant(1, 1.0);
    const auto t = simulate(s, zero_input(1), 100, 1, opt);
    REQUIRE(t.truncated_at.has_value());
    CHECK(*t.truncated_at == 13);
    CHECK_THROWS(simulate(s, zero_input(1), 0, 1));
}

TEST_CASE("model_from_raw splits a raw map") {
    const auto f = make_expression_map({{{0.5, TermKind::Lin, 0}, {0.1, TermKind::Sin, 0}, {-0.1, TermKind::Lin, 0}}}, 1);
    const auto g = make_expression_map({{{1.0, TermKind::Lin, 0}}}, 1);
    const auto m = model_from_raw("raw", f, g, Mat::Zero(1, 1), Mat::Zero(1, 1), Mat::Identity(1, 1),
                                  Mat::Identity(1, 1), IntervalVec::symmetric(1, 0.1),
                                  IntervalVec::symmetric(1, 0.1), IntervalVec::symmetric(1, 1.0));
    CHECK(m.A(0, 0) == Approx(0.3));
    CHECK(m.C(0, 0) == Approx(1.0));
    for (double x : {-2.0, 0.3, 4.0}) {
        const Vec v = Vec::Constant(1, x);
        CHECK(m.A(0, 0) * x + m.phi(v)[0] == Approx(f(v)[0]));
    }
}
