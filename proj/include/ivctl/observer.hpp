#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

#include "decomp.hpp"
#include "matops.hpp"
#include "plant.hpp"

namespace ivctl {

struct ObserverGain {
    Mat L;  // n x l
};

struct FramerState {
    Vec hi;
    Vec lo;

    static FramerState from_box(const IntervalVec& box) { return {box.hi, box.lo}; }
    [[nodiscard]] Vec width() const { return hi - lo; }
    [[nodiscard]] bool ordered() const { return hi.size() == 0 || (hi - lo).minCoeff() >= 0.0; }
    [[nodiscard]] bool contains(const Vec& x, double rel_tol = 1e-9) const {
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double tol = rel_tol * (1.0 + std::abs(x[i]));
            if (x[i] < lo[i] - tol || x[i] > hi[i] + tol)
                return false;
        }
        return true;
    }
};

inline void check_gain(const SystemModel& model, const ObserverGain& gain) {
    require_dims(gain.L.rows() == model.n() && gain.L.cols() == model.l(), "observer gain L must be n x l");
    if (!gain.L.allFinite())
        throw std::invalid_argument("observer gain L must be finite");
}

// One step of the interval framer
//   xhi+ = (A-LC)+ xhi - (A-LC)- xlo + (LV)- vhi - (LV)+ vlo + phi_d(xhi, xlo)
//          + L y + (B - LD) u + W+ whi - W- wlo + L- psi_d(xhi, xlo) - L+ psi_d(xlo, xhi)
// and the mirrored lower line. Correct for any u, any L and any noise inside
// the boxes. The framer is never clamped; lo > hi signals a model violation.
[[nodiscard]] inline FramerState framer_step(const SystemModel& model, const Decompositions& dec,
                                             const ObserverGain& gain, const FramerState& fs, const Vec& y,
                                             const Vec& u) {
    check_gain(model, gain);
    require_dims(fs.hi.size() == model.n() && fs.lo.size() == model.n(), "framer_step: framer dimension mismatch");
    require_dims(y.size() == model.l(), "framer_step: output dimension mismatch");
    require_dims(u.size() == model.m(), "framer_step: input dimension mismatch");
    const Mat& L = gain.L;
    const Mat M = model.A - L * model.C;
    const Mat P = pos_part(M), N = neg_part(M);
    const Mat LV = L * model.V;
    const Mat LVp = pos_part(LV), LVn = neg_part(LV);
    const Mat Wp = pos_part(model.W), Wn = neg_part(model.W);
    const Mat Lp = pos_part(L), Ln = neg_part(L);
    const auto& wb = model.w_box;
    const auto& vb = model.v_box;

    const Vec phi_hi = eval_decomposition(dec.phi, fs.hi, fs.lo);
    const Vec phi_lo = eval_decomposition(dec.phi, fs.lo, fs.hi);
    const Vec psi_hi = eval_decomposition(dec.psi, fs.hi, fs.lo);
    const Vec psi_lo = eval_decomposition(dec.psi, fs.lo, fs.hi);
    const Vec common = L * y + (model.B - L * model.D) * u;

    FramerState next;
    next.hi = P * fs.hi - N * fs.lo + LVn * vb.hi - LVp * vb.lo + phi_hi + common + Wp * wb.hi - Wn * wb.lo +
              Ln * psi_hi - Lp * psi_lo;
    next.lo = P * fs.lo - N * fs.hi + LVn * vb.lo - LVp * vb.hi + Ln * psi_lo - Lp * psi_hi + phi_lo + common +
              Wp * wb.lo - Wn * wb.hi;
    return next;
}

// Comparison matrix of the framer error, M_L = |A - LC| + F_phi + |L| F_psi.
[[nodiscard]] inline Mat framer_error_matrix(const SystemModel& model, const Mat& F_phi, const Mat& F_psi,
                                             const ObserverGain& gain) {
    check_gain(model, gain);
    require_dims(F_phi.rows() == model.n() && F_phi.cols() == model.n(), "F_phi must be n x n");
    require_dims(F_psi.rows() == model.l() && F_psi.cols() == model.n(), "F_psi must be l x n");
    return abs_mat(model.A - gain.L * model.C) + F_phi + abs_mat(gain.L) * F_psi;
}

// Upper bound on the next framer width:
//   eps+ <= M_L eps + |LV| dv + |W| dw
[[nodiscard]] inline Vec framer_error_step(const SystemModel& model, const Mat& F_phi, const Mat& F_psi,
                                           const ObserverGain& gain, const Vec& eps) {
    require_dims(eps.size() == model.n(), "framer_error_step: width dimension mismatch");
    return framer_error_matrix(model, F_phi, F_psi, gain) * eps +
           abs_mat(gain.L * model.V) * model.v_box.width() + abs_mat(model.W) * model.w_box.width();
}

// Upper-left 2n x 2n block of the closed-loop comparison matrix, acting on
// the upper/lower closed-loop errors. Independent of the controller gains.
[[nodiscard]] inline Mat error_comparison_matrix(const SystemModel& model, const Mat& F_phi, const Mat& F_psi,
                                                 const ObserverGain& gain) {
    check_gain(model, gain);
    const int n = model.n();
    const Mat M = model.A - gain.L * model.C;
    const Mat G = abs_mat(gain.L) * F_psi;
    Mat Au(2 * n, 2 * n);
    Au.block(0, 0, n, n) = pos_part(M) + F_phi + G;
    Au.block(0, n, n, n) = neg_part(M) + F_phi + G;
    Au.block(n, 0, n, n) = neg_part(M) + F_phi + G;
    Au.block(n, n, n, n) = pos_part(M) + F_phi + G;
    return Au;
}

struct ObserverReport {
    Mat M_L;
    double radius_ML = 0.0;
    Mat A_u;
    double radius_Au = 0.0;
    // ISS verdict: the positive comparison system is Schur stable.
    bool iss = false;
};

[[nodiscard]] inline ObserverReport verify_observer_gain(const SystemModel& model, const Mat& F_phi,
                                                         const Mat& F_psi, const ObserverGain& gain) {
    ObserverReport r;
    r.M_L = framer_error_matrix(model, F_phi, F_psi, gain);
    r.radius_ML = spectral_radius(r.M_L);
    r.A_u = error_comparison_matrix(model, F_phi, F_psi, gain);
    r.radius_Au = spectral_radius(r.A_u);
    r.iss = r.radius_ML < 1.0;
    return r;
}

// ============================================================================
// Derivative-free observer gain search
// ============================================================================

struct ObserverSearchResult {
    ObserverGain gain;
    double radius = std::numeric_limits<double>::infinity();
    bool success = false;
    int evaluations = 0;
};

// Compass search with restarts on rho(M_L) over the entries of L. Starting
// points: the least-squares cancellation L = A C^+, L = 0, then seeded
// Gaussian restarts. No optimality claim.
[[nodiscard]] inline ObserverSearchResult search_observer_gain(const SystemModel& model, const Mat& F_phi,
                                                               const Mat& F_psi, int budget,
                                                               std::uint64_t seed = 1) {
    if (budget < 1)
        throw std::invalid_argument("search_observer_gain: budget must be >= 1");
    const int n = model.n(), l = model.l();
    ObserverSearchResult best;
    best.gain.L = Mat::Zero(n, l);

    auto objective = [&](const Mat& L) {
        ++best.evaluations;
        double r = spectral_radius(framer_error_matrix(model, F_phi, F_psi, ObserverGain{L}));
        if (r < best.radius) {
            best.radius = r;
            best.gain.L = L;
        }
        return r;
    };

    const double scale = std::max(1.0, inf_norm(model.A));
    std::mt19937_64 gen(derive_seed(seed, 0x0b5e));
    std::normal_distribution<double> normal(0.0, 1.0);
    int start = 0;
    while (best.evaluations < budget && best.radius > 0.0) {
        Mat L;
        if (start == 0)
            L = model.A * model.C.completeOrthogonalDecomposition().pseudoInverse();
        else if (start == 1)
            L = Mat::Zero(n, l);
        else
            L = Mat::NullaryExpr(n, l, [&]() { return scale * normal(gen); });
        ++start;

        double f = objective(L);
        double step = 0.5 * scale;
        while (step > 1e-9 && best.evaluations < budget) {
            bool improved = false;
            for (int i = 0; i < n && best.evaluations < budget; ++i) {
                for (int j = 0; j < l && best.evaluations < budget; ++j) {
                    for (double dir : {1.0, -1.0}) {
                        if (best.evaluations >= budget)
                            break;
                        Mat trial = L;
                        trial(i, j) += dir * step;
                        const double ft = objective(trial);
                        if (ft < f) {
                            f = ft;
                            L = std::move(trial);
                            improved = true;
                            break;
                        }
                    }
                }
            }
            if (!improved)
                step *= 0.5;
        }
    }
    best.success = best.radius < 1.0;
    return best;
}

}  // namespace ivctl
