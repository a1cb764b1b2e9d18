#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "matops.hpp"

namespace ivctl::sdp {

// ============================================================================
// Problem description
// ============================================================================
//   minimize c^T x
//   subject to  F_j(x) = F_j0 + sum_i x_i F_ji   <= -margin_j I   (NSD)
//                                                or >= margin_j I (PSD)
//               Aeq x = beq

enum class Sense { NegativeSemidefinite, PositiveSemidefinite };

// One upper-triangle entry (row <= col) of a symmetric coefficient matrix.
struct Entry {
    int row = 0;
    int col = 0;
    double value = 0.0;
};

struct LmiConstraint {
    std::string name;
    int dim = 0;
    Sense sense = Sense::NegativeSemidefinite;
    double margin = 0.0;
    Mat F0;
    // coeffs[i] holds the nonzeros of F_ji.
    std::vector<std::vector<Entry>> coeffs;
};

struct Problem {
    int num_vars = 0;
    Vec c;
    std::vector<LmiConstraint> lmis;
    Mat Aeq;  // may be empty
    Vec beq;
};

enum class Status { Optimal, Infeasible, Unbounded, NumericError };

[[nodiscard]] inline std::string to_string(Status s) {
    switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::NumericError: return "numeric_error";
    }
    return "unknown";
}

struct Result {
    Status status = Status::NumericError;
    Vec x;
    double objective = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    double primal_infeasibility = 0.0;
    double dual_infeasibility = 0.0;
    double relative_gap = 0.0;
    std::string message;
};

struct Options {
    int max_iterations = 120;
    double tolerance = 1e-9;
    // Looser acceptance used when progress stalls.
    double stall_tolerance = 1e-6;
    double infeasibility_tolerance = 1e-8;
    bool verbose = false;
};

// Nonzeros of the upper triangle of a symmetric matrix.
[[nodiscard]] inline std::vector<Entry> upper_entries(const Mat& M, double drop = 0.0) {
    std::vector<Entry> out;
    for (Eigen::Index c = 0; c < M.cols(); ++c)
        for (Eigen::Index r = 0; r <= c; ++r)
            if (std::abs(M(r, c)) > drop)
                out.push_back({static_cast<int>(r), static_cast<int>(c), M(r, c)});
    return out;
}

inline void add_symmetric(Mat& M, const std::vector<Entry>& entries, double scale) {
    for (const auto& e : entries) {
        M(e.row, e.col) += scale * e.value;
        if (e.row != e.col)
            M(e.col, e.row) += scale * e.value;
    }
}

// F_j(x), dense.
[[nodiscard]] inline Mat evaluate(const LmiConstraint& lmi, const Vec& x) {
    Mat F = lmi.F0;
    for (std::size_t i = 0; i < lmi.coeffs.size(); ++i)
        if (x[static_cast<Eigen::Index>(i)] != 0.0)
            add_symmetric(F, lmi.coeffs[i], x[static_cast<Eigen::Index>(i)]);
    return 0.5 * (F + F.transpose());
}

// Worst-case eigenvalue against the constraint sense: max eig for NSD blocks,
// min eig for PSD blocks. Margins are not included.
[[nodiscard]] inline double extreme_eigenvalue(const LmiConstraint& lmi, const Vec& x) {
    const Mat F = evaluate(lmi, x);
    return lmi.sense == Sense::NegativeSemidefinite ? max_sym_eig(F) : min_sym_eig(F);
}

inline void validate(const Problem& p) {
    require_dims(p.c.size() == p.num_vars, "sdp: objective length must equal num_vars");
    for (const auto& l : p.lmis) {
        require_dims(l.F0.rows() == l.dim && l.F0.cols() == l.dim, "sdp: F0 must be dim x dim");
        require_dims(static_cast<int>(l.coeffs.size()) == p.num_vars, "sdp: one coefficient list per variable");
        for (const auto& list : l.coeffs)
            for (const auto& e : list)
                require_dims(e.row >= 0 && e.row <= e.col && e.col < l.dim, "sdp: coefficient entry out of range");
    }
    if (p.Aeq.size() > 0)
        require_dims(p.Aeq.cols() == p.num_vars && p.Aeq.rows() == p.beq.size(), "sdp: equality shape mismatch");
}

namespace detail {

// Rewrites x = x0 + N t so that Aeq x = beq holds for every t.
struct Reduction {
    Problem reduced;
    Vec x0;
    Mat N;
};

inline Reduction eliminate_equalities(const Problem& p) {
    Reduction r;
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(p.Aeq);
    r.x0 = cod.solve(p.beq);
    if ((p.Aeq * r.x0 - p.beq).norm() > 1e-9 * (1.0 + p.beq.norm()))
        throw std::invalid_argument("sdp: linear equalities are inconsistent");
    Eigen::JacobiSVD<Mat> svd(p.Aeq, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] > 1e-12 * std::max(1.0, s[0]))
            ++rank;
    r.N = svd.matrixV().rightCols(p.num_vars - rank);

    Problem& q = r.reduced;
    q.num_vars = static_cast<int>(r.N.cols());
    q.c = r.N.transpose() * p.c;
    for (const auto& l : p.lmis) {
        LmiConstraint nl{l.name, l.dim, l.sense, l.margin, evaluate(l, r.x0), {}};
        for (int j = 0; j < q.num_vars; ++j) {
            Mat D = Mat::Zero(l.dim, l.dim);
            for (int i = 0; i < p.num_vars; ++i)
                if (r.N(i, j) != 0.0)
                    add_symmetric(D, l.coeffs[static_cast<std::size_t>(i)], r.N(i, j));
            nl.coeffs.push_back(upper_entries(D, 1e-15 * std::max(1.0, D.cwiseAbs().maxCoeff())));
        }
        q.lmis.push_back(std::move(nl));
    }
    return r;
}

// Block of the conic form  max b^T y  s.t.  Z = C - sum_i y_i A_i >= 0.
struct Block {
    int dim = 0;
    Mat C;
    std::vector<int> vars;                          // variables touching this block
    std::vector<std::vector<Entry>> entries;        // A_i, parallel to vars
    std::vector<std::vector<int>> support;          // sorted row/col indices of A_i
    std::vector<Mat> compact;                       // A_i restricted to support
};

inline double inner(const std::vector<Entry>& A, const Mat& X) {
    double s = 0.0;
    for (const auto& e : A)
        s += e.row == e.col ? e.value * X(e.row, e.row) : e.value * (X(e.row, e.col) + X(e.col, e.row));
    return s;
}

inline double frob(const std::vector<Entry>& A) {
    double s = 0.0;
    for (const auto& e : A)
        s += (e.row == e.col ? 1.0 : 2.0) * e.value * e.value;
    return std::sqrt(s);
}

// Largest t with X + t dX >= 0 (infinity if unbounded). X must be PD.
inline double max_step(const Mat& X, const Mat& dX) {
    Eigen::LLT<Mat> llt(X);
    if (llt.info() != Eigen::Success)
        return 0.0;
    Mat Li = llt.matrixL().solve(Mat::Identity(X.rows(), X.cols()));
    Mat S = Li * dX * Li.transpose();
    const double lmin = min_sym_eig(S);
    return lmin >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / lmin;
}

inline Mat sym(const Mat& M) { return 0.5 * (M + M.transpose()); }

class InteriorPoint {
public:
    InteriorPoint(const Problem& p, const Options& opt) : opt_(opt), m_(p.num_vars) {
        b_ = -p.c;
        for (const auto& l : p.lmis) {
            const double s = l.sense == Sense::NegativeSemidefinite ? -1.0 : 1.0;
            Block blk;
            blk.dim = l.dim;
            blk.C = s * sym(l.F0) - l.margin * Mat::Identity(l.dim, l.dim);
            for (int i = 0; i < m_; ++i) {
                const auto& src = l.coeffs[static_cast<std::size_t>(i)];
                if (src.empty())
                    continue;
                std::vector<Entry> a;
                a.reserve(src.size());
                for (const auto& e : src)
                    a.push_back({e.row, e.col, -s * e.value});
                std::vector<int> sup;
                for (const auto& e : a) {
                    sup.push_back(e.row);
                    sup.push_back(e.col);
                }
                std::sort(sup.begin(), sup.end());
                sup.erase(std::unique(sup.begin(), sup.end()), sup.end());
                Mat cm = Mat::Zero(static_cast<Eigen::Index>(sup.size()), static_cast<Eigen::Index>(sup.size()));
                for (const auto& e : a) {
                    const auto r = std::lower_bound(sup.begin(), sup.end(), e.row) - sup.begin();
                    const auto c = std::lower_bound(sup.begin(), sup.end(), e.col) - sup.begin();
                    cm(r, c) += e.value;
                    if (r != c)
                        cm(c, r) += e.value;
                }
                blk.vars.push_back(i);
                blk.entries.push_back(std::move(a));
                blk.support.push_back(std::move(sup));
                blk.compact.push_back(std::move(cm));
            }
            blocks_.push_back(std::move(blk));
        }
    }

    Result run() {
        Result res;
        if (blocks_.empty()) {
            res.message = "no constraints";
            return res;
        }
        init();
        const double norm_b = b_.norm();
        double norm_C = 0.0;
        for (const auto& blk : blocks_)
            norm_C += blk.C.squaredNorm();
        norm_C = std::sqrt(norm_C);
        int total_dim = 0;
        for (const auto& blk : blocks_)
            total_dim += blk.dim;

        int stalls = 0;
        int stagnant = 0;
        double farkas_ratio = std::numeric_limits<double>::infinity();
        struct {
            double merit;
            Vec y;
            double pinf, dinf, gap;
        } best{std::numeric_limits<double>::infinity(), y_, 0.0, 0.0, 0.0};
        double best_merit = std::numeric_limits<double>::infinity();
        for (int it = 0; it < opt_.max_iterations; ++it) {
            res.iterations = it + 1;
            std::vector<Mat> Zinv(blocks_.size()), Rd(blocks_.size());
            for (std::size_t k = 0; k < blocks_.size(); ++k) {
                Eigen::LLT<Mat> llt(Z_[k]);
                if (llt.info() != Eigen::Success) {
                    res.message = "slack lost positive definiteness";
                    return finish(res, Status::NumericError);
                }
                Zinv[k] = llt.solve(Mat::Identity(blocks_[k].dim, blocks_[k].dim));
                Zinv[k] = sym(Zinv[k]);
                Rd[k] = blocks_[k].C - Z_[k] - adjoint(k, y_);
            }
            const Vec rp = b_ - forward(X_);
            double primal_obj = 0.0, rd_norm = 0.0, xz = 0.0;
            for (std::size_t k = 0; k < blocks_.size(); ++k) {
                primal_obj += blocks_[k].C.cwiseProduct(X_[k]).sum();
                rd_norm += Rd[k].squaredNorm();
                xz += X_[k].cwiseProduct(Z_[k]).sum();
            }
            rd_norm = std::sqrt(rd_norm);
            const double dual_obj = b_.dot(y_);
            const double mu = xz / total_dim;
            res.primal_infeasibility = rp.norm() / (1.0 + norm_b);
            res.dual_infeasibility = rd_norm / (1.0 + norm_C);
            res.relative_gap = std::abs(primal_obj - dual_obj) / (1.0 + std::abs(primal_obj) + std::abs(dual_obj));
            if (opt_.verbose)
                std::fprintf(stderr, "ipm %3d  pobj % .9e  dobj % .9e  gap %.2e  pinf %.2e  dinf %.2e  mu %.2e\n", it,
                             primal_obj, dual_obj, res.relative_gap, res.primal_infeasibility,
                             res.dual_infeasibility, mu);

            if (res.primal_infeasibility < opt_.tolerance && res.dual_infeasibility < opt_.tolerance &&
                res.relative_gap < opt_.tolerance)
                return finish(res, Status::Optimal);
            const double merit =
                std::max({res.primal_infeasibility, res.dual_infeasibility, res.relative_gap});
            // y feasibility (dinf) and the gap matter most to callers; the
            // primal residual only certifies optimality, so it gets a looser bar.
            // pinf is held to sqrt(stall_tolerance) instead of stall_tolerance.
            const double y_merit = std::max({std::sqrt(opt_.stall_tolerance) * res.primal_infeasibility,
                                             res.dual_infeasibility, res.relative_gap});
            if (y_merit < best.merit)
                best = {y_merit, y_, res.primal_infeasibility, res.dual_infeasibility, res.relative_gap};
            if (merit < 0.9 * best_merit) {
                best_merit = merit;
                stagnant = 0;
            } else if (++stagnant >= 8) {
                break;
            }
            // X / (-<C,X>) certifies that no y makes the slack PSD: for any y,
            // <C - A*(y), X> = <C,X> - y'A(X) < 0 whenever |y| < -<C,X> / |A(X)|.
            if (primal_obj < 0.0) {
                farkas_ratio = std::min(farkas_ratio, (b_ - rp).norm() / -primal_obj);
                if (farkas_ratio < opt_.infeasibility_tolerance) {
                    res.message = "Farkas certificate found: constraints are infeasible";
                    return finish(res, Status::Infeasible);
                }
            }
            if (dual_obj > 0.0) {
                double r = 0.0;
                for (std::size_t k = 0; k < blocks_.size(); ++k)
                    r += (blocks_[k].C - Rd[k]).squaredNorm();
                if (std::sqrt(r) / dual_obj < opt_.infeasibility_tolerance) {
                    res.message = "improving ray found: objective unbounded below";
                    return finish(res, Status::Unbounded);
                }
            }

            Mat M = schur(Zinv);
            Eigen::LLT<Mat> chol;
            double reg = 0.0;
            const double diag_scale = std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
            for (int attempt = 0; attempt < 8; ++attempt) {
                chol.compute(M + reg * Mat::Identity(m_, m_));
                if (chol.info() == Eigen::Success)
                    break;
                reg = reg == 0.0 ? 1e-14 * diag_scale : reg * 100.0;
            }
            if (chol.info() != Eigen::Success) {
                res.message = "Schur complement is not positive definite";
                return finish(res, Status::NumericError);
            }

            // Predictor.
            std::vector<Mat> RcZ(blocks_.size());
            for (std::size_t k = 0; k < blocks_.size(); ++k)
                RcZ[k] = -X_[k];
            [[maybe_unused]] auto [dXa, dya, dZa] = direction(chol, rp, Rd, RcZ, Zinv);
            const double ap = std::min(1.0, step_to_boundary(X_, dXa));
            const double ad = std::min(1.0, step_to_boundary(Z_, dZa));
            double mu_aff = 0.0;
            for (std::size_t k = 0; k < blocks_.size(); ++k)
                mu_aff += (X_[k] + ap * dXa[k]).cwiseProduct(Z_[k] + ad * dZa[k]).sum();
            mu_aff /= total_dim;
            const double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 0.0, 1.0);

            // Corrector.
            for (std::size_t k = 0; k < blocks_.size(); ++k)
                RcZ[k] = (sigma * mu) * Zinv[k] - X_[k] - dXa[k] * dZa[k] * Zinv[k];
            auto [dX, dy, dZ] = direction(chol, rp, Rd, RcZ, Zinv);
            const double tau = 0.9 + 0.09 * std::min(ap, ad);
            const double sp = std::min(1.0, tau * step_to_boundary(X_, dX));
            const double sd = std::min(1.0, tau * step_to_boundary(Z_, dZ));
            for (std::size_t k = 0; k < blocks_.size(); ++k) {
                X_[k] = sym(X_[k] + sp * dX[k]);
                Z_[k] = sym(Z_[k] + sd * dZ[k]);
            }
            y_ += sd * dy;

            stalls = (sp < 1e-8 && sd < 1e-8) ? stalls + 1 : 0;
            if (stalls >= 3)
                break;
        }
        // Degenerate problems can lose primal accuracy after the best point;
        // fall back to the best iterate seen.
        if (best.merit < opt_.stall_tolerance) {
            y_ = best.y;
            res.primal_infeasibility = best.pinf;
            res.dual_infeasibility = best.dinf;
            res.relative_gap = best.gap;
            res.message = "converged to reduced accuracy";
            return finish(res, Status::Optimal);
        }
        if (farkas_ratio < std::sqrt(opt_.infeasibility_tolerance)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "approximate Farkas certificate: no feasible point with |y| < %.3g",
                          1.0 / farkas_ratio);
            res.message = buf;
            return finish(res, Status::Infeasible);
        }
        res.message = "no convergence (iteration limit or stagnation)";
        return finish(res, Status::NumericError);
    }

private:
    struct Direction {
        std::vector<Mat> dX;
        Vec dy;
        std::vector<Mat> dZ;
    };

    void init() {
        y_ = Vec::Zero(m_);
        X_.clear();
        Z_.clear();
        for (const auto& blk : blocks_) {
            const double n = blk.dim;
            double ratio = 0.0, normA = 0.0;
            for (std::size_t t = 0; t < blk.vars.size(); ++t) {
                const double f = frob(blk.entries[t]);
                ratio = std::max(ratio, (1.0 + std::abs(b_[blk.vars[t]])) / (1.0 + f));
                normA = std::max(normA, f);
            }
            const double xi = std::max({10.0, std::sqrt(n), n * ratio});
            const double eta = std::max({10.0, std::sqrt(n), normA, blk.C.norm()});
            X_.push_back(xi * Mat::Identity(blk.dim, blk.dim));
            Z_.push_back(eta * Mat::Identity(blk.dim, blk.dim));
        }
    }

    // A(X)_i = sum over blocks <A_i, X>
    Vec forward(const std::vector<Mat>& X) const {
        Vec out = Vec::Zero(m_);
        for (std::size_t k = 0; k < blocks_.size(); ++k)
            for (std::size_t t = 0; t < blocks_[k].vars.size(); ++t)
                out[blocks_[k].vars[t]] += inner(blocks_[k].entries[t], X[k]);
        return out;
    }

    Mat adjoint(std::size_t k, const Vec& y) const {
        Mat out = Mat::Zero(blocks_[k].dim, blocks_[k].dim);
        for (std::size_t t = 0; t < blocks_[k].vars.size(); ++t) {
            const double v = y[blocks_[k].vars[t]];
            if (v != 0.0)
                add_symmetric(out, blocks_[k].entries[t], v);
        }
        return out;
    }

    // M_ij = sum over blocks tr(A_i X A_j Z^-1)
    Mat schur(const std::vector<Mat>& Zinv) const {
        Mat M = Mat::Zero(m_, m_);
        for (std::size_t k = 0; k < blocks_.size(); ++k) {
            const auto& blk = blocks_[k];
            const Mat& X = X_[k];
            const Mat& Zi = Zinv[k];
            const auto nv = blk.vars.size();
            for (std::size_t t = 0; t < nv; ++t) {
                const auto& sup = blk.support[t];
                const auto s = static_cast<Eigen::Index>(sup.size());
                Mat Xs(blk.dim, s), Zs(s, blk.dim);
                for (Eigen::Index a = 0; a < s; ++a) {
                    Xs.col(a) = X.col(sup[static_cast<std::size_t>(a)]);
                    Zs.row(a) = Zi.row(sup[static_cast<std::size_t>(a)]);
                }
                const Mat H = (Xs * blk.compact[t]) * Zs;
                const int i = blk.vars[t];
                for (std::size_t u = t; u < nv; ++u) {
                    const double v = inner(blk.entries[u], H);
                    M(i, blk.vars[u]) += v;
                    if (u != t)
                        M(blk.vars[u], i) += v;
                }
            }
        }
        return sym(M);
    }

    // Solves the HKM Newton system for the given R_c Z^-1 term.
    Direction direction(const Eigen::LLT<Mat>& chol, const Vec& rp, const std::vector<Mat>& Rd,
                        const std::vector<Mat>& RcZ, const std::vector<Mat>& Zinv) const {
        std::vector<Mat> tmp(blocks_.size());
        for (std::size_t k = 0; k < blocks_.size(); ++k)
            tmp[k] = X_[k] * Rd[k] * Zinv[k] - RcZ[k];
        Direction d;
        d.dy = chol.solve(rp + forward(tmp));
        d.dX.resize(blocks_.size());
        d.dZ.resize(blocks_.size());
        for (std::size_t k = 0; k < blocks_.size(); ++k) {
            d.dZ[k] = sym(Rd[k] - adjoint(k, d.dy));
            d.dX[k] = sym(RcZ[k] - X_[k] * d.dZ[k] * Zinv[k]);
        }
        return d;
    }

    double step_to_boundary(const std::vector<Mat>& S, const std::vector<Mat>& dS) const {
        double a = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < S.size(); ++k)
            a = std::min(a, max_step(S[k], dS[k]));
        return a;
    }

    Result finish(Result& r, Status s) const {
        r.status = s;
        r.x = y_;
        return r;
    }

    Options opt_;
    int m_;
    Vec b_;
    std::vector<Block> blocks_;
    std::vector<Mat> X_, Z_;
    Vec y_;
};

}  // namespace detail

// Primal-dual interior-point method (HKM direction, Mehrotra predictor-
// corrector, infeasible start). Linear equalities are removed by null-space
// elimination before the solve.
[[nodiscard]] inline Result solve_interior_point(const Problem& p, const Options& opt = {}) {
    validate(p);
    if (p.Aeq.size() > 0) {
        auto red = detail::eliminate_equalities(p);
        Result r = detail::InteriorPoint(red.reduced, opt).run();
        r.x = red.x0 + red.N * r.x;
        r.objective = p.c.dot(r.x);
        return r;
    }
    Result r = detail::InteriorPoint(p, opt).run();
    r.objective = p.c.dot(r.x);
    return r;
}

using Solver = std::function<Result(const Problem&)>;

// Looks up a solver by name; "ipm" (default) is the only built-in.
[[nodiscard]] inline Solver solver_by_name(const std::string& name, const Options& opt = {}) {
    if (name.empty() || name == "ipm")
        return [opt](const Problem& p) { return solve_interior_point(p, opt); };
    throw std::invalid_argument("unknown SDP solver '" + name + "' (available: ipm)");
}

}  // namespace ivctl::sdp
