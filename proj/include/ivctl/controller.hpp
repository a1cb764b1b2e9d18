#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "decomp.hpp"
#include "matops.hpp"
#include "observer.hpp"
#include "plant.hpp"

namespace ivctl {

// ============================================================================
// Dynamic output-feedback controller
// ============================================================================
//   xc+ = A_c xc + Kb_hi xhi - Kb_lo xlo + Kx_nu (phi_d(xhi, xlo) - phi_d(xlo, xhi))
//   u   = C_c xc + Kd_hi xhi - Kd_lo xlo + Ku_nu (phi_d(xhi, xlo) - phi_d(xlo, xhi))

struct ControllerGains {
    Mat A_c;    // n x n
    Mat Kb_hi;  // n x n
    Mat Kb_lo;  // n x n
    Mat C_c;    // m x n
    Mat Kd_hi;  // m x n
    Mat Kd_lo;  // m x n
    Mat Kx_nu;  // n x n
    Mat Ku_nu;  // m x n

    static ControllerGains zero(int n, int m) {
        return {Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(m, n),
                Mat::Zero(m, n), Mat::Zero(m, n), Mat::Zero(n, n), Mat::Zero(m, n)};
    }

    [[nodiscard]] std::vector<std::string> problems(int n, int m) const {
        std::vector<std::string> out;
        auto shape = [&](const Mat& M, int r, int c, const char* name) {
            if (M.rows() != r || M.cols() != c)
                out.push_back(std::string(name) + " must be " + std::to_string(r) + "x" + std::to_string(c) +
                              ", got " + std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
            else if (!M.allFinite())
                out.push_back(std::string(name) + " must be finite");
        };
        shape(A_c, n, n, "A_c");
        shape(Kb_hi, n, n, "Kb_hi");
        shape(Kb_lo, n, n, "Kb_lo");
        shape(C_c, m, n, "C_c");
        shape(Kd_hi, m, n, "Kd_hi");
        shape(Kd_lo, m, n, "Kd_lo");
        shape(Kx_nu, n, n, "Kx_nu");
        shape(Ku_nu, m, n, "Ku_nu");
        return out;
    }

    void validate(int n, int m) const {
        auto p = problems(n, m);
        if (p.empty())
            return;
        std::string msg = "invalid controller gains:";
        for (const auto& s : p)
            msg += "\n  - " + s;
        throw DimensionError(msg);
    }
};

struct ControllerState {
    Vec xc;
};

struct ClosedLoopState {
    Vec plant_x;
    FramerState framer;
    ControllerState ctrl;
};

struct ControllerOutput {
    ControllerState next;
    Vec u;
};

[[nodiscard]] inline ControllerOutput controller_step(const ControllerGains& g, const JssDecomposition& phi,
                                                      const ControllerState& cs, const FramerState& fs) {
    const auto n = g.A_c.rows();
    g.validate(static_cast<int>(n), static_cast<int>(g.C_c.rows()));
    require_dims(cs.xc.size() == n, "controller_step: controller state dimension mismatch");
    require_dims(fs.hi.size() == n && fs.lo.size() == n, "controller_step: framer dimension mismatch");
    const Vec dphi = eval_decomposition(phi, fs.hi, fs.lo) - eval_decomposition(phi, fs.lo, fs.hi);
    ControllerOutput out;
    out.next.xc = g.A_c * cs.xc + g.Kb_hi * fs.hi - g.Kb_lo * fs.lo + g.Kx_nu * dphi;
    out.u = g.C_c * cs.xc + g.Kd_hi * fs.hi - g.Kd_lo * fs.lo + g.Ku_nu * dphi;
    return out;
}

// ============================================================================
// Closed loop
// ============================================================================

struct ClosedLoopStepResult {
    ClosedLoopState next;
    Vec u;
    Vec y;
};

// The controller reads the current framer, then plant and framer advance.
[[nodiscard]] inline ClosedLoopStepResult closed_loop_step(const SystemModel& model, const Decompositions& dec,
                                                           const ObserverGain& L, const ControllerGains& g,
                                                           const ClosedLoopState& s, const Vec& w, const Vec& v) {
    g.validate(model.n(), model.m());
    auto ctrl = controller_step(g, dec.phi, s.ctrl, s.framer);
    auto out = plant_step(model, s.plant_x, ctrl.u, w, v);
    ClosedLoopStepResult r;
    r.next.framer = framer_step(model, dec, L, s.framer, out.y, ctrl.u);
    r.next.plant_x = std::move(out.x_next);
    r.next.ctrl = std::move(ctrl.next);
    r.u = std::move(ctrl.u);
    r.y = std::move(out.y);
    return r;
}

// Closed-loop framer written directly in terms of the true state:
//   xhi+ = (P + B Kd_hi) xhi - (N + B Kd_lo) xlo + B C_c xc + B Ku_nu dphi + LC x + LV v
//          + (LV)- vhi - (LV)+ vlo + W+ whi - W- wlo + phi_d(xhi, xlo) + L+ dlo_psi + L- dhi_psi
//   xlo+ = (P - B Kd_lo) xlo - (N - B Kd_hi) xhi + B C_c xc + B Ku_nu dphi + LC x + LV v
//          + (LV)- vlo - (LV)+ vhi + W+ wlo - W- whi + phi_d(xlo, xhi) - L+ dhi_psi - L- dlo_psi
// with P, N the parts of A - LC, dhi_psi = psi_d(xhi, xlo) - psi(x), dlo_psi = psi(x) - psi_d(xlo, xhi).
// Must agree with closed_loop_step's framer; used as a cross-check.
[[nodiscard]] inline FramerState closed_loop_framer_direct(const SystemModel& model, const Decompositions& dec,
                                                           const ObserverGain& gain, const ControllerGains& g,
                                                           const ClosedLoopState& s, const Vec& v) {
    const Mat& L = gain.L;
    const Mat& B = model.B;
    const auto& fs = s.framer;
    const auto& x = s.plant_x;
    const Mat M = model.A - L * model.C;
    const Mat P = pos_part(M), N = neg_part(M);
    const Mat LV = L * model.V;
    const Mat Wp = pos_part(model.W), Wn = neg_part(model.W);
    const Mat Lp = pos_part(L), Ln = neg_part(L);
    const auto& wb = model.w_box;
    const auto& vb = model.v_box;

    const Vec phi_hi = eval_decomposition(dec.phi, fs.hi, fs.lo);
    const Vec phi_lo = eval_decomposition(dec.phi, fs.lo, fs.hi);
    const Vec psi_x = model.psi(x);
    const Vec dhi_psi = eval_decomposition(dec.psi, fs.hi, fs.lo) - psi_x;
    const Vec dlo_psi = psi_x - eval_decomposition(dec.psi, fs.lo, fs.hi);
    const Vec common = B * g.C_c * s.ctrl.xc + B * g.Ku_nu * (phi_hi - phi_lo) + L * model.C * x + LV * v;

    FramerState next;
    next.hi = (P + B * g.Kd_hi) * fs.hi - (N + B * g.Kd_lo) * fs.lo + common + neg_part(LV) * vb.hi -
              pos_part(LV) * vb.lo + Wp * wb.hi - Wn * wb.lo + phi_hi + Lp * dlo_psi + Ln * dhi_psi;
    next.lo = (P - B * g.Kd_lo) * fs.lo - (N - B * g.Kd_hi) * fs.hi + common + neg_part(LV) * vb.lo -
              pos_part(LV) * vb.hi + Wp * wb.lo - Wn * wb.hi + phi_lo - Lp * dhi_psi - Ln * dlo_psi;
    return next;
}

struct ClosedLoopErrors {
    Vec hi;  // ebar = xhi - x
    Vec lo;  // elow = x - xlo
};

// Upper and lower closed-loop error recursion. Given e = (ebar, elow) and the
// true state x, with xhi = x + ebar, xlo = x - elow:
//   ebar+ = P ebar + N elow + dhi_phi + L+ dlo_psi + L- dhi_psi + LV v - W w
//           + (LV)- vhi - (LV)+ vlo + W+ whi - W- wlo
//   elow+ = P elow + N ebar + dlo_phi + L+ dhi_psi + L- dlo_psi - LV v + W w
//           + (LV)+ vhi - (LV)- vlo + W- whi - W+ wlo
// The controller gains do not enter.
[[nodiscard]] inline ClosedLoopErrors closed_loop_error_step(const SystemModel& model, const Decompositions& dec,
                                                             const ObserverGain& gain, const ClosedLoopErrors& e,
                                                             const Vec& x, const Vec& w, const Vec& v) {
    check_gain(model, gain);
    require_dims(e.hi.size() == model.n() && e.lo.size() == model.n() && x.size() == model.n(),
                 "closed_loop_error_step: dimension mismatch");
    const Mat& L = gain.L;
    const Mat M = model.A - L * model.C;
    const Mat P = pos_part(M), N = neg_part(M);
    const Mat LV = L * model.V;
    const Mat LVp = pos_part(LV), LVn = neg_part(LV);
    const Mat Wp = pos_part(model.W), Wn = neg_part(model.W);
    const Mat Lp = pos_part(L), Ln = neg_part(L);
    const auto& wb = model.w_box;
    const auto& vb = model.v_box;

    const Vec xhi = x + e.hi, xlo = x - e.lo;
    const Vec phi_x = model.phi(x), psi_x = model.psi(x);
    const Vec dhi_phi = eval_decomposition(dec.phi, xhi, xlo) - phi_x;
    const Vec dlo_phi = phi_x - eval_decomposition(dec.phi, xlo, xhi);
    const Vec dhi_psi = eval_decomposition(dec.psi, xhi, xlo) - psi_x;
    const Vec dlo_psi = psi_x - eval_decomposition(dec.psi, xlo, xhi);
    const Vec noise = LV * v - model.W * w;

    ClosedLoopErrors next;
    next.hi = P * e.hi + N * e.lo + dhi_phi + Lp * dlo_psi + Ln * dhi_psi + noise + LVn * vb.hi - LVp * vb.lo +
              Wp * wb.hi - Wn * wb.lo;
    next.lo = P * e.lo + N * e.hi + dlo_phi + Lp * dhi_psi + Ln * dlo_psi - noise + LVp * vb.hi - LVn * vb.lo +
              Wn * wb.hi - Wp * wb.lo;
    return next;
}

// Augmented comparison state z = [ebar; elow; xc; xhi; xlo].
[[nodiscard]] inline Vec augmented_state(const ClosedLoopState& s) {
    const auto n = s.plant_x.size();
    Vec z(5 * n);
    z << s.framer.hi - s.plant_x, s.plant_x - s.framer.lo, s.ctrl.xc, s.framer.hi, s.framer.lo;
    return z;
}

// Augmented noise eta = [whi; wlo; w; vhi; vlo; v].
[[nodiscard]] inline Vec augmented_noise(const SystemModel& model, const Vec& w, const Vec& v) {
    Vec eta(3 * (model.nw() + model.nv()));
    eta << model.w_box.hi, model.w_box.lo, w, model.v_box.hi, model.v_box.lo, v;
    return eta;
}

// ============================================================================
// Closed-loop simulation
// ============================================================================

struct ClosedLoopTrajectory {
    std::vector<Vec> x;   // x_0 .. x_K
    std::vector<Vec> hi;  // framer upper bounds
    std::vector<Vec> lo;  // framer lower bounds
    std::vector<Vec> xc;
    std::vector<Vec> u;  // u_0 .. u_{K-1}
    std::vector<Vec> y;
    std::vector<Vec> w;
    std::vector<Vec> v;
    int horizon = 0;
    std::optional<int> truncated_at;
    // First step at which lo <= x <= hi failed, if any.
    std::optional<int> first_violation;

    [[nodiscard]] bool contained() const { return !first_violation.has_value(); }
    [[nodiscard]] int steps() const { return static_cast<int>(x.size()) - 1; }
    [[nodiscard]] Vec width(int k) const { return hi[k] - lo[k]; }
    [[nodiscard]] double max_state_norm() const {
        double m = 0.0;
        for (const auto& s : x)
            m = std::max(m, s.cwiseAbs().maxCoeff());
        return m;
    }
};

// Without gains the plant runs open loop (u = 0) next to the framer.
[[nodiscard]] inline ClosedLoopTrajectory simulate_closed_loop(const SystemModel& model, const Decompositions& dec,
                                                               const ObserverGain& L,
                                                               const std::optional<ControllerGains>& gains,
                                                               int horizon, std::uint64_t seed,
                                                               const SimOptions& opt = {}) {
    if (horizon < 1)
        throw std::invalid_argument("simulate_closed_loop: horizon must be >= 1");
    const ControllerGains g = gains ? *gains : ControllerGains::zero(model.n(), model.m());
    g.validate(model.n(), model.m());
    Rng rng_w(seed, Stream::ProcessNoise);
    Rng rng_v(seed, Stream::MeasurementNoise);

    ClosedLoopState s{initial_state(model, seed, opt), FramerState::from_box(model.x0_box),
                      ControllerState{Vec::Zero(model.n())}};
    ClosedLoopTrajectory t;
    t.horizon = horizon;
    auto record = [&](int k) {
        t.x.push_back(s.plant_x);
        t.hi.push_back(s.framer.hi);
        t.lo.push_back(s.framer.lo);
        t.xc.push_back(s.ctrl.xc);
        if (!t.first_violation && !s.framer.contains(s.plant_x))
            t.first_violation = k;
    };
    record(0);
    for (int k = 0; k < horizon; ++k) {
        Vec w = sample_noise(model.w_box, rng_w, opt.noise);
        Vec v = sample_noise(model.v_box, rng_v, opt.noise);
        auto r = closed_loop_step(model, dec, L, g, s, w, v);
        s = std::move(r.next);
        t.u.push_back(std::move(r.u));
        t.y.push_back(std::move(r.y));
        t.w.push_back(std::move(w));
        t.v.push_back(std::move(v));
        record(k + 1);
        // The framer may grow fast without affecting an open-loop plant, so it
        // only stops the run once it is no longer finite.
        if (diverged(s.plant_x) || diverged(s.ctrl.xc) || !s.framer.hi.allFinite() || !s.framer.lo.allFinite()) {
            t.truncated_at = k + 1;
            break;
        }
    }
    return t;
}

}  // namespace ivctl
