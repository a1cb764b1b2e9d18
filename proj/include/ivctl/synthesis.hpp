#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "controller.hpp"
#include "decomp.hpp"
#include "matops.hpp"
#include "observer.hpp"
#include "plant.hpp"
#include "sdp.hpp"

namespace ivctl {

inline constexpr double kPsdMargin = 1e-7;
inline constexpr double kResidualTol = 1e-6;
inline constexpr double kReplicaTol = 1e-6;

// ============================================================================
// Gain stacking
// ============================================================================
// K~ = [A_c; Kb_hi; Kb_lo; C_c; Kd_hi; Kd_lo; Kx_nu F_phi; Ku_nu F_phi], h x n
// with slot heights [n, n, n, m, m, m, n, m].

struct GainLayout {
    int n = 0;
    int m = 0;

    [[nodiscard]] std::array<int, 8> heights() const { return {n, n, n, m, m, m, n, m}; }
    [[nodiscard]] int offset(int slot) const {
        int off = 0;
        for (int s = 0; s < slot; ++s)
            off += heights()[static_cast<std::size_t>(s)];
        return off;
    }
    [[nodiscard]] int height() const { return 4 * n + 4 * m; }
};

[[nodiscard]] inline Mat pack_gains(const ControllerGains& g, const Mat& F_phi) {
    const int n = static_cast<int>(g.A_c.rows()), m = static_cast<int>(g.C_c.rows());
    g.validate(n, m);
    require_dims(F_phi.rows() == n && F_phi.cols() == n, "pack_gains: F_phi must be n x n");
    Mat K(4 * n + 4 * m, n);
    K << g.A_c, g.Kb_hi, g.Kb_lo, g.C_c, g.Kd_hi, g.Kd_lo, g.Kx_nu * F_phi, g.Ku_nu * F_phi;
    return K;
}

[[nodiscard]] inline ControllerGains unpack_gains(const Mat& K, const Mat& F_phi, int n, int m) {
    GainLayout lay{n, m};
    require_dims(K.rows() == lay.height() && K.cols() == n, "unpack_gains: stacked gain must be (4n+4m) x n");
    auto slot = [&](int s) -> Mat { return K.middleRows(lay.offset(s), lay.heights()[static_cast<std::size_t>(s)]); };
    const Mat Finv = F_phi.inverse();
    return {slot(0), slot(1), slot(2), slot(3), slot(4), slot(5), slot(6) * Finv, slot(7) * Finv};
}

// ============================================================================
// Comparison system
// ============================================================================
// z = [ebar; elow; xc; xhi; xlo], eta = [whi; wlo; w; vhi; vlo; v]
//   z+ <= A~ z + lambda(z) + Lambda eta,   A~(g) = A^ + B^ diag5(K~(g))

struct ComparisonSystem {
    int n = 0;
    int m = 0;
    GainLayout layout;
    Mat A_tilde;
    Mat Lambda;
    Mat A_hat;
    Mat B_hat;
    JssDecomposition phi;

    [[nodiscard]] int h() const { return layout.height(); }
    [[nodiscard]] int noise_dim() const { return static_cast<int>(Lambda.cols()); }

    // lambda(z) = [0; 0; 0; phi_d(xhi, xlo); phi_d(xlo, xhi)]
    [[nodiscard]] Vec lambda(const Vec& z) const {
        require_dims(z.size() == 5 * n, "lambda: z must have length 5n");
        const Vec xhi = z.segment(3 * n, n), xlo = z.segment(4 * n, n);
        Vec out = Vec::Zero(5 * n);
        out.segment(3 * n, n) = eval_decomposition(phi, xhi, xlo);
        out.segment(4 * n, n) = eval_decomposition(phi, xlo, xhi);
        return out;
    }
};

namespace detail {

inline Mat comparison_matrix(const SystemModel& model, const Decompositions& dec, const Mat& L,
                             const ControllerGains& g) {
    const int n = model.n();
    const Mat& B = model.B;
    const Mat& F = dec.F_phi;
    const Mat M = model.A - L * model.C;
    const Mat P = pos_part(M), N = neg_part(M);
    const Mat G = abs_mat(L) * dec.F_psi;
    const Mat LC = L * model.C;
    const Mat Kx = g.Kx_nu * F, Ku = B * g.Ku_nu * F;
    const Mat Z = Mat::Zero(n, n);
    Mat At(5 * n, 5 * n);
    At << P + F + G, N + F + G, Z, Z, Z,
          N + F + G, P + F + G, Z, Z, Z,
          Z, Z, g.A_c, g.Kb_hi + Kx, -(g.Kb_lo + Kx),
          -LC + G + Ku, G + Ku, B * g.C_c, P + B * g.Kd_hi + LC, -N - B * g.Kd_lo,
          -G + Ku, LC - G + Ku, B * g.C_c, -N + B * g.Kd_hi, P - B * g.Kd_lo + LC;
    return At;
}

inline Mat noise_matrix(const SystemModel& model, const Mat& L) {
    const int n = model.n(), nw = model.nw(), nv = model.nv();
    const Mat& W = model.W;
    const Mat LV = L * model.V;
    const Mat Wp = pos_part(W), Wn = neg_part(W), LVp = pos_part(LV), LVn = neg_part(LV);
    const Mat Zw = Mat::Zero(n, nw), Zv = Mat::Zero(n, nv);
    Mat Lam(5 * n, 3 * (nw + nv));
    Lam << Wp, -Wn, -W, LVn, -LVp, LV,
           Wn, -Wp, W, LVp, -LVn, -LV,
           Zw, Zw, Zw, Zv, Zv, Zv,
           Wp, -Wn, Zw, LVn, -LVp, LV,
           -Wn, Wp, Zw, -LVp, LVn, LV;
    return Lam;
}

// B^ is the unique 0/I/B selector with A~(g) - A~(0) = B^ diag5(K~(g)).
inline Mat selector_matrix(const SystemModel& model) {
    const int n = model.n(), m = model.m();
    GainLayout lay{n, m};
    const int h = lay.height();
    Mat Bh = Mat::Zero(5 * n, 5 * h);
    auto put = [&](int bi, int bj, int slot, const Mat& blk) {
        Bh.block(bi * n, bj * h + lay.offset(slot), n, blk.cols()) += blk;
    };
    const Mat I = Mat::Identity(n, n);
    put(2, 2, 0, I);
    put(2, 3, 1, I);
    put(2, 3, 6, I);
    put(2, 4, 2, -I);
    put(2, 4, 6, -I);
    for (int i : {3, 4}) {
        put(i, 0, 7, model.B);
        put(i, 1, 7, model.B);
        put(i, 2, 3, model.B);
        put(i, 3, 4, model.B);
        put(i, 4, 5, -model.B);
    }
    return Bh;
}

}  // namespace detail

[[nodiscard]] inline ComparisonSystem build_comparison(const SystemModel& model, const Decompositions& dec,
                                                       const ObserverGain& L, const ControllerGains& g) {
    check_gain(model, L);
    g.validate(model.n(), model.m());
    ComparisonSystem cs;
    cs.n = model.n();
    cs.m = model.m();
    cs.layout = {cs.n, cs.m};
    cs.phi = dec.phi;
    cs.A_tilde = detail::comparison_matrix(model, dec, L.L, g);
    cs.A_hat = detail::comparison_matrix(model, dec, L.L, ControllerGains::zero(cs.n, cs.m));
    cs.B_hat = detail::selector_matrix(model);
    cs.Lambda = detail::noise_matrix(model, L.L);

    const Mat residual = cs.A_tilde - cs.A_hat - cs.B_hat * block_diag_repeat(pack_gains(g, dec.F_phi), 5);
    const double scale = 1.0 + cs.A_tilde.cwiseAbs().maxCoeff();
    if (residual.cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::logic_error("build_comparison: A~ = A^ + B^ diag5(K~) does not hold");
    return cs;
}

// ============================================================================
// Synthesis SDP
// ============================================================================

struct DecisionVars {
    double mu = 0.0;
    Mat Gamma;
    Mat Q;
    Mat Theta;
};

// Free: Q and Theta unstructured. Structured: Q = diag5(Q0), Theta = diag5(Theta0),
// so (Q^-1 Theta)^T is exactly block diagonal.
enum class ThetaMode { Free, Structured };

[[nodiscard]] inline std::string to_string(ThetaMode m) { return m == ThetaMode::Free ? "free" : "structured"; }

[[nodiscard]] inline double epsilon_of(double alpha, double gamma) { return 1.0 / (alpha * gamma * gamma) - 1.0; }

// Blocks of the three constraints, without margins:
//   [G-Q, Q, QA^T + Theta B^T, 0; *, -aI, 0, 0; *, *, -Q/2, Q; *, *, *, Q - 2 eps G] < 0
//   [-mu I, Lam^T, Lam^T; *, -Q/2, 0; *, *, -G] < 0
//   [I, Q; Q, G] >= 0
// With constants = false only the parts linear in the decision variables are
// returned (used to extract coefficient matrices).
[[nodiscard]] inline std::array<Mat, 3> lmi_blocks(const ComparisonSystem& cs, double alpha, double epsilon,
                                                   const DecisionVars& v, bool constants = true) {
    const int N = 5 * cs.n;
    const int nt = cs.noise_dim();
    const double c = constants ? 1.0 : 0.0;
    const Mat I = Mat::Identity(N, N);
    const Mat QA = v.Q * cs.A_hat.transpose() + v.Theta * cs.B_hat.transpose();

    std::array<Mat, 3> out;
    Mat& L1 = out[0];
    L1 = Mat::Zero(4 * N, 4 * N);
    L1.block(0, 0, N, N) = v.Gamma - v.Q;
    L1.block(0, N, N, N) = v.Q;
    L1.block(0, 2 * N, N, N) = QA;
    L1.block(N, N, N, N) = -c * alpha * I;
    L1.block(2 * N, 2 * N, N, N) = -0.5 * v.Q;
    L1.block(2 * N, 3 * N, N, N) = v.Q;
    L1.block(3 * N, 3 * N, N, N) = v.Q - 2.0 * epsilon * v.Gamma;
    L1 = L1.triangularView<Eigen::Upper>();
    L1 = Mat(L1 + L1.transpose()) - Mat(L1.diagonal().asDiagonal());

    Mat& L2 = out[1];
    L2 = Mat::Zero(nt + 2 * N, nt + 2 * N);
    L2.block(0, 0, nt, nt) = -v.mu * Mat::Identity(nt, nt);
    L2.block(0, nt, nt, N) = c * cs.Lambda.transpose();
    L2.block(0, nt + N, nt, N) = c * cs.Lambda.transpose();
    L2.block(nt, nt, N, N) = -0.5 * v.Q;
    L2.block(nt + N, nt + N, N, N) = -v.Gamma;
    L2 = L2.triangularView<Eigen::Upper>();
    L2 = Mat(L2 + L2.transpose()) - Mat(L2.diagonal().asDiagonal());

    Mat& L3 = out[2];
    L3 = Mat::Zero(2 * N, 2 * N);
    L3.block(0, 0, N, N) = c * I;
    L3.block(0, N, N, N) = v.Q;
    L3.block(N, 0, N, N) = v.Q;
    L3.block(N, N, N, N) = v.Gamma;
    return out;
}

struct SdpProblem {
    double alpha = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    double margin = kPsdMargin;
    ThetaMode mode = ThetaMode::Free;
    ComparisonSystem cs;
    // Theta is parametrized as T basis^T on the row space B^ actually sees;
    // the complement never enters a constraint and would make the SDP degenerate.
    Mat basis;
    sdp::Problem standard;

    [[nodiscard]] int num_vars() const { return standard.num_vars; }
    [[nodiscard]] std::array<int, 3> block_dims() const {
        return {standard.lmis[0].dim, standard.lmis[1].dim, standard.lmis[2].dim};
    }

    [[nodiscard]] DecisionVars unpack(const Vec& y) const {
        const int N = 5 * cs.n;
        const int q = mode == ThetaMode::Free ? N : cs.n;
        int k = 0;
        auto read_sym = [&](int d) {
            Mat S(d, d);
            for (int col = 0; col < d; ++col)
                for (int row = 0; row <= col; ++row)
                    S(row, col) = S(col, row) = y[k++];
            return S;
        };
        DecisionVars v;
        v.mu = y[k++];
        v.Gamma = read_sym(N);
        const Mat Q0 = read_sym(q);
        Mat T(q, basis.cols());
        for (Eigen::Index col = 0; col < T.cols(); ++col)
            for (Eigen::Index row = 0; row < q; ++row)
                T(row, col) = y[k++];
        const Mat Theta0 = T * basis.transpose();
        if (mode == ThetaMode::Free) {
            v.Q = Q0;
            v.Theta = Theta0;
        } else {
            v.Q = block_diag_repeat(Q0, 5);
            v.Theta = block_diag_repeat(Theta0, 5);
        }
        return v;
    }
};

namespace detail {

inline Mat row_space_basis(const Mat& M) {
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > 1e-10 * std::max(1.0, s[0]))
            ++r;
    return svd.matrixV().leftCols(r);
}

}  // namespace detail

[[nodiscard]] inline SdpProblem assemble_sdp(const ComparisonSystem& cs, double alpha, double gamma,
                                             ThetaMode mode = ThetaMode::Free, double margin = kPsdMargin) {
    if (!(alpha > 0.0))
        throw std::invalid_argument("assemble_sdp: alpha must be positive");
    const double eps = epsilon_of(alpha, gamma);
    if (!(eps > 0.0)) {
        std::ostringstream msg;
        msg << "assemble_sdp: epsilon = 1/(alpha*gamma^2) - 1 = " << eps
            << " must be positive; need alpha*gamma^2 < 1 (alpha=" << alpha << ", gamma=" << gamma << ")";
        throw std::invalid_argument(msg.str());
    }
    SdpProblem p;
    p.alpha = alpha;
    p.epsilon = eps;
    p.gamma = gamma;
    p.margin = margin;
    p.mode = mode;
    p.cs = cs;

    const int n = cs.n, N = 5 * n, h = cs.h();
    if (mode == ThetaMode::Free) {
        p.basis = detail::row_space_basis(cs.B_hat);
    } else {
        // Stack every n x h block of B^; Theta0 only meets their common row space.
        Mat stack(25 * n, h);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j)
                stack.block((5 * i + j) * n, 0, n, h) = cs.B_hat.block(i * n, j * h, n, h);
        p.basis = detail::row_space_basis(stack);
    }
    const int q = mode == ThetaMode::Free ? N : n;
    const int r = static_cast<int>(p.basis.cols());
    const int nvars = 1 + N * (N + 1) / 2 + q * (q + 1) / 2 + q * r;

    sdp::Problem& sp = p.standard;
    sp.num_vars = nvars;
    sp.c = Vec::Zero(nvars);
    sp.c[0] = 1.0;
    const DecisionVars zero = p.unpack(Vec::Zero(nvars));
    const auto F0 = lmi_blocks(cs, alpha, eps, zero);
    const std::array<const char*, 3> names = {"decay", "attenuation", "coupling"};
    for (int j = 0; j < 3; ++j) {
        sdp::LmiConstraint c;
        c.name = names[static_cast<std::size_t>(j)];
        c.dim = static_cast<int>(F0[static_cast<std::size_t>(j)].rows());
        c.sense = j < 2 ? sdp::Sense::NegativeSemidefinite : sdp::Sense::PositiveSemidefinite;
        c.margin = j < 2 ? margin : 0.0;
        c.F0 = F0[static_cast<std::size_t>(j)];
        c.coeffs.resize(static_cast<std::size_t>(nvars));
        sp.lmis.push_back(std::move(c));
    }
    Vec e = Vec::Zero(nvars);
    for (int i = 0; i < nvars; ++i) {
        e[i] = 1.0;
        const DecisionVars v = p.unpack(e);
        const auto F = lmi_blocks(cs, alpha, eps, v, false);
        for (std::size_t j = 0; j < 3; ++j)
            sp.lmis[j].coeffs[static_cast<std::size_t>(i)] = sdp::upper_entries(F[j], 1e-14);
        e[i] = 0.0;
    }
    return p;
}

struct LmiResiduals {
    double decay_max_eig = std::numeric_limits<double>::quiet_NaN();        // must be < 0
    double attenuation_max_eig = std::numeric_limits<double>::quiet_NaN();  // must be < 0
    double coupling_min_eig = std::numeric_limits<double>::quiet_NaN();     // must be >= 0
    double schur_min_eig = std::numeric_limits<double>::quiet_NaN();        // Gamma - Q^2

    [[nodiscard]] bool pass(double tol = kResidualTol) const {
        return decay_max_eig < tol && attenuation_max_eig < tol && coupling_min_eig > -tol;
    }
};

[[nodiscard]] inline LmiResiduals lmi_residuals(const ComparisonSystem& cs, double alpha, double epsilon,
                                                const DecisionVars& v) {
    const auto B = lmi_blocks(cs, alpha, epsilon, v);
    LmiResiduals r;
    r.decay_max_eig = max_sym_eig(B[0]);
    r.attenuation_max_eig = max_sym_eig(B[1]);
    r.coupling_min_eig = min_sym_eig(B[2]);
    r.schur_min_eig = min_sym_eig(v.Gamma - v.Q * v.Q);
    return r;
}

struct SdpSolution {
    sdp::Status status = sdp::Status::NumericError;
    std::string message;
    ThetaMode mode = ThetaMode::Free;
    int iterations = 0;
    double mu_star = std::numeric_limits<double>::quiet_NaN();
    DecisionVars vars;
    LmiResiduals residuals;

    [[nodiscard]] bool feasible() const { return status == sdp::Status::Optimal; }
    [[nodiscard]] bool residuals_ok() const { return feasible() && residuals.pass(); }
};

[[nodiscard]] inline SdpSolution solve_sdp(const SdpProblem& p, const sdp::Solver& solver) {
    const auto res = solver(p.standard);
    SdpSolution s;
    s.status = res.status;
    s.message = res.message;
    s.mode = p.mode;
    s.iterations = res.iterations;
    if (res.x.size() == p.num_vars() && res.x.allFinite()) {
        s.vars = p.unpack(res.x);
        s.mu_star = s.vars.mu;
        s.residuals = lmi_residuals(p.cs, p.alpha, p.epsilon, s.vars);
    }
    if (s.feasible() && !s.residuals.pass()) {
        s.message += (s.message.empty() ? "" : "; ") + std::string("independent LMI residuals exceed tolerance");
    }
    return s;
}

// ============================================================================
// Gain recovery
// ============================================================================

struct RecoveredGains {
    ControllerGains gains;
    Mat K_tilde;
    // max |X_kk - K~| over the five diagonal replicas of X = (Q^-1 Theta)^T,
    // together with the largest off-diagonal block entry.
    double replica_deviation = 0.0;

    [[nodiscard]] bool structured(double tol = kReplicaTol) const { return replica_deviation <= tol; }
};

[[nodiscard]] inline RecoveredGains recover_gains(const DecisionVars& v, const ComparisonSystem& cs,
                                                  const Mat& F_phi) {
    const int n = cs.n, h = cs.h();
    require_dims(v.Q.rows() == 5 * n && v.Theta.rows() == 5 * n && v.Theta.cols() == 5 * h,
                 "recover_gains: decision variable shapes do not match the comparison system");
    Eigen::FullPivLU<Mat> lu(v.Q);
    if (!lu.isInvertible())
        throw std::invalid_argument("recover_gains: Q is singular");
    const Mat X = lu.solve(v.Theta).transpose();  // 5h x 5n
    RecoveredGains r;
    r.K_tilde = Mat::Zero(h, n);
    for (int k = 0; k < 5; ++k)
        r.K_tilde += X.block(k * h, k * n, h, n);
    r.K_tilde /= 5.0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            const Mat blk = X.block(i * h, j * n, h, n);
            const double d = (i == j ? Mat(blk - r.K_tilde) : blk).cwiseAbs().maxCoeff();
            r.replica_deviation = std::max(r.replica_deviation, d);
        }
    r.gains = unpack_gains(r.K_tilde, F_phi, n, cs.m);
    return r;
}

// ============================================================================
// Two-stage synthesis
// ============================================================================

struct SynthesisResult {
    ComparisonSystem cs;
    std::array<int, 3> block_dims{};
    double alpha = 0.0;
    double epsilon = 0.0;
    double gamma = 0.0;
    std::vector<SdpSolution> stages;
    std::optional<RecoveredGains> recovered;

    [[nodiscard]] const SdpSolution& final_stage() const { return stages.back(); }
    [[nodiscard]] bool success() const {
        return !stages.empty() && final_stage().residuals_ok() && recovered && recovered->structured();
    }
};

// Stage 1 leaves Q and Theta free. If (Q^-1 Theta)^T is not block diagonal
// within tolerance, stage 2 re-solves with Q = diag5(Q0), Theta = diag5(Theta0).
[[nodiscard]] inline SynthesisResult synthesize(const SystemModel& model, const Decompositions& dec,
                                                const ObserverGain& L, double alpha, const sdp::Solver& solver) {
    SynthesisResult out;
    out.cs = build_comparison(model, dec, L, ControllerGains::zero(model.n(), model.m()));
    out.alpha = alpha;
    out.gamma = dec.gamma();
    out.epsilon = epsilon_of(alpha, out.gamma);
    for (ThetaMode mode : {ThetaMode::Free, ThetaMode::Structured}) {
        const SdpProblem p = assemble_sdp(out.cs, alpha, out.gamma, mode);
        out.block_dims = p.block_dims();
        out.stages.push_back(solve_sdp(p, solver));
        const auto& s = out.stages.back();
        if (!s.feasible())
            break;
        out.recovered = recover_gains(s.vars, out.cs, dec.F_phi);
        if (out.recovered->structured())
            break;
    }
    return out;
}

// ============================================================================
// Certificate check with P = Q^-1 on the untransformed LMIs
// ============================================================================
//   [I-P, I, A~^T P, 0; *, -aI, 0, 0; *, *, -P/2, P; *, *, *, P - 2 eps I] < 0
//   [-mu I, Lam^T P, Lam^T P; *, -P/2, 0; *, *, -I] < 0

struct CertificateReport {
    double decay_max_eig = 0.0;
    double attenuation_max_eig = 0.0;
    double A_tilde_radius = 0.0;
    bool certified = false;
};

[[nodiscard]] inline std::array<Mat, 2> certificate_blocks(const Mat& A_tilde, const Mat& Lambda, const Mat& P,
                                                           double mu, double alpha, double epsilon) {
    const auto N = A_tilde.rows();
    const auto nt = Lambda.cols();
    const Mat I = Mat::Identity(N, N);
    Mat L1 = Mat::Zero(4 * N, 4 * N);
    L1.block(0, 0, N, N) = I - P;
    L1.block(0, N, N, N) = I;
    L1.block(N, 0, N, N) = I;
    L1.block(0, 2 * N, N, N) = A_tilde.transpose() * P;
    L1.block(2 * N, 0, N, N) = P * A_tilde;
    L1.block(N, N, N, N) = -alpha * I;
    L1.block(2 * N, 2 * N, N, N) = -0.5 * P;
    L1.block(2 * N, 3 * N, N, N) = P;
    L1.block(3 * N, 2 * N, N, N) = P;
    L1.block(3 * N, 3 * N, N, N) = P - 2.0 * epsilon * I;

    Mat L2 = Mat::Zero(nt + 2 * N, nt + 2 * N);
    L2.block(0, 0, nt, nt) = -mu * Mat::Identity(nt, nt);
    L2.block(0, nt, nt, N) = Lambda.transpose() * P;
    L2.block(0, nt + N, nt, N) = Lambda.transpose() * P;
    L2.block(nt, 0, N, nt) = P * Lambda;
    L2.block(nt + N, 0, N, nt) = P * Lambda;
    L2.block(nt, nt, N, N) = -0.5 * P;
    L2.block(nt + N, nt + N, N, N) = -I;
    return {L1, L2};
}

[[nodiscard]] inline CertificateReport verify_certified_gains(const SystemModel& model, const Decompositions& dec,
                                                              const ObserverGain& L, const ControllerGains& g,
                                                              const Mat& P, double mu, double alpha,
                                                              double epsilon, double tol = kResidualTol) {
    const auto cs = build_comparison(model, dec, L, g);
    require_dims(P.rows() == 5 * model.n() && P.cols() == 5 * model.n(), "verify_certified_gains: P must be 5n x 5n");
    const auto blocks = certificate_blocks(cs.A_tilde, cs.Lambda, P, mu, alpha, epsilon);
    CertificateReport r;
    r.decay_max_eig = max_sym_eig(blocks[0]);
    r.attenuation_max_eig = max_sym_eig(blocks[1]);
    r.A_tilde_radius = spectral_radius(cs.A_tilde);
    r.certified = r.decay_max_eig < tol && r.attenuation_max_eig < tol && min_sym_eig(P) > 0.0;
    return r;
}

// Certificate search for fixed gains: minimize mu over (mu, P) subject to the
// two certificate LMIs, which are affine in (mu, P). Used when gains arrive
// without their Q (for example hand-entered gains).
struct CertificateSearch {
    sdp::Status status = sdp::Status::NumericError;
    std::string message;
    double mu = std::numeric_limits<double>::quiet_NaN();
    Mat P;
    CertificateReport report;

    [[nodiscard]] bool found() const { return status == sdp::Status::Optimal && report.certified; }
};

[[nodiscard]] inline CertificateSearch find_certificate(const SystemModel& model, const Decompositions& dec,
                                                        const ObserverGain& L, const ControllerGains& g,
                                                        double alpha, double epsilon, const sdp::Solver& solver,
                                                        double margin = kPsdMargin) {
    const auto cs = build_comparison(model, dec, L, g);
    const int N = static_cast<int>(cs.A_tilde.rows());
    const int nvars = 1 + N * (N + 1) / 2;
    auto unpack = [&](const Vec& x) {
        Mat P(N, N);
        int k = 1;
        for (int j = 0; j < N; ++j)
            for (int i = 0; i <= j; ++i, ++k)
                P(i, j) = P(j, i) = x[k];
        return std::pair<double, Mat>{x[0], P};
    };
    auto blocks = [&](const Vec& x) {
        auto [mu, P] = unpack(x);
        return certificate_blocks(cs.A_tilde, cs.Lambda, P, mu, alpha, epsilon);
    };

    sdp::Problem sp;
    sp.num_vars = nvars;
    sp.c = Vec::Zero(nvars);
    sp.c[0] = 1.0;
    const auto F0 = blocks(Vec::Zero(nvars));
    for (std::size_t j = 0; j < 2; ++j) {
        sdp::LmiConstraint c;
        c.name = j == 0 ? "certificate_decay" : "certificate_attenuation";
        c.dim = static_cast<int>(F0[j].rows());
        c.sense = sdp::Sense::NegativeSemidefinite;
        c.margin = margin;
        c.F0 = F0[j];
        c.coeffs.resize(static_cast<std::size_t>(nvars));
        sp.lmis.push_back(std::move(c));
    }
    Vec e = Vec::Zero(nvars);
    for (int i = 0; i < nvars; ++i) {
        e[i] = 1.0;
        const auto F = blocks(e);
        for (std::size_t j = 0; j < 2; ++j)
            sp.lmis[j].coeffs[static_cast<std::size_t>(i)] = sdp::upper_entries(Mat(F[j] - F0[j]), 1e-14);
        e[i] = 0.0;
    }

    const auto res = solver(sp);
    CertificateSearch out;
    out.status = res.status;
    out.message = res.message;
    if (res.x.size() == nvars && res.x.allFinite()) {
        std::tie(out.mu, out.P) = unpack(res.x);
        const auto B = certificate_blocks(cs.A_tilde, cs.Lambda, out.P, out.mu, alpha, epsilon);
        out.report.decay_max_eig = max_sym_eig(B[0]);
        out.report.attenuation_max_eig = max_sym_eig(B[1]);
        out.report.A_tilde_radius = spectral_radius(cs.A_tilde);
        out.report.certified = out.status == sdp::Status::Optimal && out.report.decay_max_eig < kResidualTol &&
                               out.report.attenuation_max_eig < kResidualTol && min_sym_eig(out.P) > 0.0;
    } else {
        out.report.A_tilde_radius = spectral_radius(cs.A_tilde);
    }
    return out;
}

// ============================================================================
// Empirical attenuation
// ============================================================================

struct AttenuationReport {
    double mu_star = 0.0;
    // max over k of |z_k|^2 / |eta_k|^2
    double max_step_ratio = 0.0;
    // sum_k |z_k|^2 / sum_k |eta_k|^2
    double cumulative_ratio = 0.0;
    int samples = 0;
};

// z and eta are paired by index.
[[nodiscard]] inline AttenuationReport attenuation_check(const std::vector<Vec>& z, const std::vector<Vec>& eta,
                                                         double mu_star) {
    require_dims(z.size() == eta.size(), "attenuation_check: z and eta sequences differ in length");
    AttenuationReport r;
    r.mu_star = mu_star;
    double zs = 0.0, es = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double a = z[k].squaredNorm(), b = eta[k].squaredNorm();
        zs += a;
        es += b;
        if (a > 0.0)
            r.max_step_ratio = std::max(r.max_step_ratio, b > 0.0 ? a / b : std::numeric_limits<double>::infinity());
        ++r.samples;
    }
    r.cumulative_ratio = zs > 0.0 ? (es > 0.0 ? zs / es : std::numeric_limits<double>::infinity()) : 0.0;
    return r;
}

// z_k and eta_k sequences of a closed-loop run, k = 0 .. K-1.
[[nodiscard]] inline std::pair<std::vector<Vec>, std::vector<Vec>> augmented_signals(
    const SystemModel& model, const ClosedLoopTrajectory& t) {
    std::vector<Vec> z, eta;
    for (std::size_t k = 0; k < t.w.size(); ++k) {
        ClosedLoopState s{t.x[k], {t.hi[k], t.lo[k]}, {t.xc[k]}};
        z.push_back(augmented_state(s));
        eta.push_back(augmented_noise(model, t.w[k], t.v[k]));
    }
    return {std::move(z), std::move(eta)};
}

}  // namespace ivctl
