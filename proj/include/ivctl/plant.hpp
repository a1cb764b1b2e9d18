#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "decomp.hpp"
#include "matops.hpp"

namespace ivctl {

// ============================================================================
// Plant model
// ============================================================================
//   x+ = A x + phi(x) + B u + W w,   w in [w_lo, w_hi]
//   y  = C x + psi(x) + D u + V v,   v in [v_lo, v_hi]
// with phi, psi Jacobian sign-stable.

struct SystemModel {
    std::string name;
    Mat A, B, C, D, W, V;
    NonlinearMap phi;
    NonlinearMap psi;
    IntervalVec w_box;
    IntervalVec v_box;
    IntervalVec x0_box;

    [[nodiscard]] int n() const { return static_cast<int>(A.rows()); }
    [[nodiscard]] int m() const { return static_cast<int>(B.cols()); }
    [[nodiscard]] int l() const { return static_cast<int>(C.rows()); }
    [[nodiscard]] int nw() const { return static_cast<int>(W.cols()); }
    [[nodiscard]] int nv() const { return static_cast<int>(V.cols()); }

    // Collects every inconsistency instead of stopping at the first one.
    [[nodiscard]] std::vector<std::string> problems() const {
        std::vector<std::string> out;
        auto check = [&](bool ok, std::string msg) {
            if (!ok)
                out.push_back(std::move(msg));
        };
        const auto dims = [](const Mat& M) {
            return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
        };
        check(A.rows() > 0 && A.rows() == A.cols(), "A must be square and nonempty, got " + dims(A));
        check(B.rows() == A.rows(), "B must have n rows, got " + dims(B));
        check(C.cols() == A.cols(), "C must have n columns, got " + dims(C));
        check(D.rows() == C.rows() && D.cols() == B.cols(), "D must be l x m, got " + dims(D));
        check(W.rows() == A.rows(), "W must have n rows, got " + dims(W));
        check(V.rows() == C.rows(), "V must have l rows, got " + dims(V));
        check(w_box.size() == W.cols(), "w box length must equal columns of W");
        check(v_box.size() == V.cols(), "v box length must equal columns of V");
        check(x0_box.size() == A.rows(), "x0 box length must equal n");
        check(phi.input_dim == n() && phi.output_dim == n(), "phi must map R^n to R^n");
        check(psi.input_dim == n() && psi.output_dim == l(), "psi must map R^n to R^l");
        for (const Mat* M : {&A, &B, &C, &D, &W, &V})
            check(M->allFinite(), "model matrices must be finite");
        if (phi.jac_lo.size() > 0 && phi.jac_lo.rows() == phi.jac_hi.rows() && phi.jac_lo.cols() == phi.jac_hi.cols())
            check(is_sign_stable(phi.jac_lo, phi.jac_hi), "phi is not Jacobian sign-stable");
        if (psi.jac_lo.size() > 0 && psi.jac_lo.rows() == psi.jac_hi.rows() && psi.jac_lo.cols() == psi.jac_hi.cols())
            check(is_sign_stable(psi.jac_lo, psi.jac_hi), "psi is not Jacobian sign-stable");
        return out;
    }

    void validate() const {
        auto p = problems();
        if (p.empty())
            return;
        std::string msg = "invalid system model:";
        for (const auto& s : p)
            msg += "\n  - " + s;
        throw DimensionError(msg);
    }
};

// Build a model from raw f, g: A and C are the remainders of the JSS
// decompositions and phi, psi their residuals.
[[nodiscard]] inline SystemModel model_from_raw(std::string name, const NonlinearMap& f, const NonlinearMap& g,
                                                Mat B, Mat D, Mat W, Mat V, IntervalVec w_box,
                                                IntervalVec v_box, IntervalVec x0_box,
                                                RemainderRule rule = RemainderRule::SmallerMagnitude) {
    auto df = remainder_decompose(f, rule);
    auto dg = remainder_decompose(g, rule);
    SystemModel m{std::move(name), df.remainder, std::move(B), dg.remainder, std::move(D), std::move(W),
                  std::move(V), df.residual, dg.residual, std::move(w_box), std::move(v_box), std::move(x0_box)};
    m.validate();
    return m;
}

// Decompositions of phi and psi plus the bounding matrices used downstream.
// F_phi is regularized to be invertible.
struct Decompositions {
    JssDecomposition phi;
    JssDecomposition psi;
    Mat F_phi;
    Mat F_psi;

    [[nodiscard]] double gamma() const { return inf_norm(F_phi); }
};

[[nodiscard]] inline Decompositions decompose_model(const SystemModel& model, double eps0 = 1e-3,
                                                    RegularizePolicy policy = RegularizePolicy::OnlyIfSingular) {
    model.validate();
    Decompositions d{pass_through(model.phi, model.A), pass_through(model.psi, model.C), {}, {}};
    d.F_phi = regularize_bounding(d.phi.bounding, eps0, policy);
    d.F_psi = d.psi.bounding;
    return d;
}

// ============================================================================
// Stepping
// ============================================================================

class NoiseOutOfBox : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct PlantOutput {
    Vec x_next;
    Vec y;
};

[[nodiscard]] inline PlantOutput plant_step(const SystemModel& model, const Vec& x, const Vec& u, const Vec& w,
                                            const Vec& v) {
    require_dims(x.size() == model.n(), "plant_step: state dimension mismatch");
    require_dims(u.size() == model.m(), "plant_step: input dimension mismatch");
    require_dims(w.size() == model.nw(), "plant_step: w dimension mismatch");
    require_dims(v.size() == model.nv(), "plant_step: v dimension mismatch");
    if (!model.w_box.contains(w))
        throw NoiseOutOfBox("plant_step: w outside its box");
    if (!model.v_box.contains(v))
        throw NoiseOutOfBox("plant_step: v outside its box");
    return {model.A * x + model.phi(x) + model.B * u + model.W * w,
            model.C * x + model.psi(x) + model.D * u + model.V * v};
}

// ============================================================================
// Random streams
// ============================================================================
// mt19937_64 seeded through splitmix64(seed ^ splitmix64(stream)). Uniform
// doubles use the top 53 bits, so sequences are identical on every platform.

enum class Stream : std::uint64_t { InitialState = 1, ProcessNoise = 2, MeasurementNoise = 3 };

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    Rng(std::uint64_t seed, Stream s) : gen_(derive_seed(seed, static_cast<std::uint64_t>(s))) {}

    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform01(); }
    bool coin() { return (gen_() >> 63) != 0; }

private:
    std::mt19937_64 gen_;
};

enum class NoiseScheme { Uniform, Extreme, Zero };

[[nodiscard]] inline std::optional<NoiseScheme> parse_noise_scheme(const std::string& s) {
    if (s == "uniform") return NoiseScheme::Uniform;
    if (s == "extreme") return NoiseScheme::Extreme;
    if (s == "zero") return NoiseScheme::Zero;
    return std::nullopt;
}

// "zero" returns the box midpoint clamped into the box, which is 0 for any
// box straddling the origin.
[[nodiscard]] inline Vec sample_noise(const IntervalVec& box, Rng& rng, NoiseScheme scheme) {
    Vec out(box.size());
    for (Eigen::Index i = 0; i < box.size(); ++i) {
        switch (scheme) {
        case NoiseScheme::Uniform: out[i] = rng.uniform(box.lo[i], box.hi[i]); break;
        case NoiseScheme::Extreme: out[i] = rng.coin() ? box.hi[i] : box.lo[i]; break;
        case NoiseScheme::Zero: out[i] = std::clamp(0.0, box.lo[i], box.hi[i]); break;
        }
    }
    return out;
}

[[nodiscard]] inline Vec sample_noise(const IntervalVec& box, std::uint64_t seed, NoiseScheme scheme) {
    Rng rng(seed);
    return sample_noise(box, rng, scheme);
}

// ============================================================================
// Open-loop simulation
// ============================================================================

inline constexpr double kDivergenceThreshold = 1e12;

enum class InitialState { Midpoint, Uniform };

struct SimOptions {
    NoiseScheme noise = NoiseScheme::Uniform;
    InitialState x0_mode = InitialState::Midpoint;
    std::optional<Vec> x0;  // overrides x0_mode
};

struct Trajectory {
    std::vector<Vec> states;   // x_0 .. x_K (K+1 entries unless truncated)
    std::vector<Vec> outputs;  // y_0 .. y_{K-1}
    std::vector<Vec> inputs;   // u_0 .. u_{K-1}
    std::vector<Vec> w;
    std::vector<Vec> v;
    int horizon = 0;
    // Step index at which the divergence guard fired, if any.
    std::optional<int> truncated_at;

    [[nodiscard]] double max_state_norm() const {
        double m = 0.0;
        for (const auto& x : states)
            m = std::max(m, x.cwiseAbs().maxCoeff());
        return m;
    }
};

// u_k as a function of (k, y_k).
using InputPolicy = std::function<Vec(int, const Vec&)>;

[[nodiscard]] inline InputPolicy zero_input(int m) {
    return [m](int, const Vec&) { return Vec::Zero(m); };
}

[[nodiscard]] inline Vec initial_state(const SystemModel& model, std::uint64_t seed, const SimOptions& opt) {
    if (opt.x0) {
        require_dims(opt.x0->size() == model.n(), "initial state dimension mismatch");
        return *opt.x0;
    }
    if (opt.x0_mode == InitialState::Midpoint)
        return model.x0_box.midpoint();
    Rng rng(seed, Stream::InitialState);
    return sample_noise(model.x0_box, rng, NoiseScheme::Uniform);
}

[[nodiscard]] inline bool diverged(const Vec& x) {
    return !x.allFinite() || x.cwiseAbs().maxCoeff() > kDivergenceThreshold;
}

[[nodiscard]] inline Trajectory simulate(const SystemModel& model, const InputPolicy& policy, int horizon,
                                         std::uint64_t seed, const SimOptions& opt = {}) {
    if (horizon < 1)
        throw std::invalid_argument("simulate: horizon must be >= 1");
    Rng rng_w(seed, Stream::ProcessNoise);
    Rng rng_v(seed, Stream::MeasurementNoise);
    Trajectory t;
    t.horizon = horizon;
    Vec x = initial_state(model, seed, opt);
    t.states.push_back(x);
    for (int k = 0; k < horizon; ++k) {
        Vec w = sample_noise(model.w_box, rng_w, opt.noise);
        Vec v = sample_noise(model.v_box, rng_v, opt.noise);
        // y_k does not depend on u_k through the policy argument; evaluate
        // the output map with u = 0 first, then add D u.
        Vec y0 = model.C * x + model.psi(x) + model.V * v;
        Vec u = policy(k, y0);
        require_dims(u.size() == model.m(), "simulate: policy returned wrong input dimension");
        auto out = plant_step(model, x, u, w, v);
        t.outputs.push_back(out.y);
        t.inputs.push_back(u);
        t.w.push_back(std::move(w));
        t.v.push_back(std::move(v));
        x = std::move(out.x_next);
        t.states.push_back(x);
        if (diverged(x)) {
            t.truncated_at = k + 1;
            break;
        }
    }
    return t;
}

}  // namespace ivctl
