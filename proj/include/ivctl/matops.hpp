#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ivctl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Raised on inconsistent matrix/vector shapes anywhere in the library.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require_dims(bool ok, const std::string& what) {
    if (!ok)
        throw DimensionError(what);
}

// ============================================================================
// Matrix splitting
// ============================================================================
// For any M: M = pos_part(M) - neg_part(M), |M| = pos_part(M) + neg_part(M).

[[nodiscard]] inline Mat pos_part(const Mat& M) {
    return M.cwiseMax(0.0);
}

[[nodiscard]] inline Mat neg_part(const Mat& M) {
    return pos_part(M) - M;
}

[[nodiscard]] inline Mat abs_mat(const Mat& M) {
    return pos_part(M) + neg_part(M);
}

// Elementwise sign with sgn(0) = +1.
[[nodiscard]] inline Mat sign_mat(const Mat& M) {
    return M.unaryExpr([](double v) { return v >= 0.0 ? 1.0 : -1.0; });
}

// Induced infinity norm (max absolute row sum).
[[nodiscard]] inline double inf_norm(const Mat& M) {
    if (M.size() == 0)
        return 0.0;
    return M.cwiseAbs().rowwise().sum().maxCoeff();
}

[[nodiscard]] inline double spectral_radius(const Mat& M) {
    require_dims(M.rows() == M.cols(), "spectral_radius: matrix must be square");
    if (M.size() == 0)
        return 0.0;
    Eigen::EigenSolver<Mat> es(M, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("spectral_radius: eigenvalue iteration did not converge");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

[[nodiscard]] inline Eigen::VectorXcd eigenvalues(const Mat& M) {
    require_dims(M.rows() == M.cols(), "eigenvalues: matrix must be square");
    Eigen::EigenSolver<Mat> es(M, false);
    return es.eigenvalues();
}

// Largest / smallest eigenvalue of the symmetric part of M.
[[nodiscard]] inline double max_sym_eig(const Mat& M) {
    Mat S = 0.5 * (M + M.transpose());
    return Eigen::SelfAdjointEigenSolver<Mat>(S, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

[[nodiscard]] inline double min_sym_eig(const Mat& M) {
    Mat S = 0.5 * (M + M.transpose());
    return Eigen::SelfAdjointEigenSolver<Mat>(S, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

[[nodiscard]] inline bool all_finite(const Mat& M) {
    return M.allFinite();
}

// Block-diagonal replication diag(M, ..., M) with `copies` copies.
[[nodiscard]] inline Mat block_diag_repeat(const Mat& M, int copies) {
    Mat out = Mat::Zero(M.rows() * copies, M.cols() * copies);
    for (int k = 0; k < copies; ++k)
        out.block(k * M.rows(), k * M.cols(), M.rows(), M.cols()) = M;
    return out;
}

// ============================================================================
// Interval vectors
// ============================================================================

struct IntervalVec {
    Vec lo;
    Vec hi;

    IntervalVec() = default;
    IntervalVec(Vec lower, Vec upper) : lo(std::move(lower)), hi(std::move(upper)) {
        require_dims(lo.size() == hi.size(), "IntervalVec: lo/hi length mismatch");
        if (!lo.allFinite() || !hi.allFinite())
            throw std::invalid_argument("IntervalVec: bounds must be finite");
        if (lo.size() > 0 && (hi - lo).minCoeff() < 0.0)
            throw std::invalid_argument("IntervalVec: lo must be <= hi elementwise");
    }

    static IntervalVec symmetric(int dim, double radius) {
        return {Vec::Constant(dim, -radius), Vec::Constant(dim, radius)};
    }
    static IntervalVec point(const Vec& x) { return {x, x}; }

    [[nodiscard]] Eigen::Index size() const { return lo.size(); }
    [[nodiscard]] Vec width() const { return hi - lo; }
    [[nodiscard]] Vec midpoint() const { return 0.5 * (lo + hi); }
    [[nodiscard]] bool contains(const Vec& x, double tol = 0.0) const {
        if (x.size() != lo.size())
            return false;
        return lo.size() == 0 || ((x - lo).minCoeff() >= -tol && (hi - x).minCoeff() >= -tol);
    }
};

}  // namespace ivctl
