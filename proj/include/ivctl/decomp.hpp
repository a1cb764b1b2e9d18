#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "matops.hpp"

namespace ivctl {

// ============================================================================
// Structured nonlinearity expressions
// ============================================================================
// A row is a sum of terms coef * kind(x[var]). Variable indices are 0-based in
// memory; the config layer converts from the 1-based file format.

enum class TermKind { Sin, Cos, Lin, Const };

struct Term {
    double coef = 0.0;
    TermKind kind = TermKind::Const;
    int var = 0;

    friend bool operator==(const Term&, const Term&) = default;
};

using ExprRow = std::vector<Term>;
using Expression = std::vector<ExprRow>;

[[nodiscard]] inline std::string to_string(TermKind k) {
    switch (k) {
    case TermKind::Sin: return "sin";
    case TermKind::Cos: return "cos";
    case TermKind::Lin: return "lin";
    case TermKind::Const: return "const";
    }
    return "?";
}

[[nodiscard]] inline std::optional<TermKind> parse_term_kind(const std::string& s) {
    if (s == "sin") return TermKind::Sin;
    if (s == "cos") return TermKind::Cos;
    if (s == "lin") return TermKind::Lin;
    if (s == "const") return TermKind::Const;
    return std::nullopt;
}

[[nodiscard]] inline double eval_term(const Term& t, const Vec& x) {
    switch (t.kind) {
    case TermKind::Sin: return t.coef * std::sin(x[t.var]);
    case TermKind::Cos: return t.coef * std::cos(x[t.var]);
    case TermKind::Lin: return t.coef * x[t.var];
    case TermKind::Const: return t.coef;
    }
    return 0.0;
}

[[nodiscard]] inline double eval_row(const ExprRow& row, const Vec& x) {
    double s = 0.0;
    for (const auto& t : row)
        s += eval_term(t, x);
    return s;
}

namespace detail {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Exact range of cos over [a, b].
inline std::pair<double, double> cos_range(double a, double b) {
    if (b - a >= kTwoPi)
        return {-1.0, 1.0};
    double lo = std::min(std::cos(a), std::cos(b));
    double hi = std::max(std::cos(a), std::cos(b));
    if (kTwoPi * std::ceil(a / kTwoPi) <= b)
        hi = 1.0;
    if (std::numbers::pi + kTwoPi * std::ceil((a - std::numbers::pi) / kTwoPi) <= b)
        lo = -1.0;
    return {lo, hi};
}

inline std::pair<double, double> sin_range(double a, double b) {
    return cos_range(a - std::numbers::pi / 2, b - std::numbers::pi / 2);
}

inline std::pair<double, double> scaled(double c, std::pair<double, double> r) {
    return c >= 0.0 ? std::pair{c * r.first, c * r.second} : std::pair{c * r.second, c * r.first};
}

}  // namespace detail

// Derivative bounds of one expression row with respect to every input, over
// R^n or over a declared box. Terms on the same variable are summed as
// intervals, which is exact when at most one trig term touches a variable.
inline void expression_jacobian_bounds(const Expression& expr, int input_dim,
                                       const std::optional<IntervalVec>& domain, Mat& jac_lo,
                                       Mat& jac_hi) {
    const auto rows = static_cast<Eigen::Index>(expr.size());
    jac_lo = Mat::Zero(rows, input_dim);
    jac_hi = Mat::Zero(rows, input_dim);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (const auto& t : expr[static_cast<std::size_t>(i)]) {
            if (t.kind == TermKind::Const)
                continue;
            require_dims(t.var >= 0 && t.var < input_dim,
                         "expression: variable index " + std::to_string(t.var + 1) + " out of range");
            double a = -std::numeric_limits<double>::infinity();
            double b = std::numeric_limits<double>::infinity();
            if (domain) {
                a = domain->lo[t.var];
                b = domain->hi[t.var];
            }
            std::pair<double, double> r{t.coef, t.coef};
            if (t.kind == TermKind::Sin) {
                // d/dx c sin x = c cos x
                r = domain ? detail::scaled(t.coef, detail::cos_range(a, b))
                           : detail::scaled(t.coef, {-1.0, 1.0});
            } else if (t.kind == TermKind::Cos) {
                // d/dx c cos x = -c sin x
                r = domain ? detail::scaled(-t.coef, detail::sin_range(a, b))
                           : detail::scaled(-t.coef, {-1.0, 1.0});
            }
            jac_lo(i, t.var) += r.first;
            jac_hi(i, t.var) += r.second;
        }
    }
}

// ============================================================================
// Nonlinear maps with Jacobian bounds
// ============================================================================

struct NonlinearMap {
    int input_dim = 0;
    int output_dim = 0;
    std::function<Vec(const Vec&)> fn;
    Mat jac_lo;
    Mat jac_hi;
    std::optional<Expression> expression;
    // Box over which the Jacobian bounds are claimed; nullopt means all of R^n.
    std::optional<IntervalVec> domain;

    [[nodiscard]] Vec operator()(const Vec& x) const {
        require_dims(x.size() == input_dim, "NonlinearMap: input dimension mismatch");
        if (expression) {
            Vec out(output_dim);
            for (int i = 0; i < output_dim; ++i)
                out[i] = eval_row((*expression)[static_cast<std::size_t>(i)], x);
            return out;
        }
        return fn(x);
    }

    [[nodiscard]] double row(int i, const Vec& x) const {
        if (expression)
            return eval_row((*expression)[static_cast<std::size_t>(i)], x);
        return fn(x)[i];
    }

    void validate() const {
        require_dims(jac_lo.rows() == output_dim && jac_lo.cols() == input_dim,
                     "NonlinearMap: jac_lo must be output_dim x input_dim");
        require_dims(jac_hi.rows() == output_dim && jac_hi.cols() == input_dim,
                     "NonlinearMap: jac_hi must be output_dim x input_dim");
        if (!jac_lo.allFinite() || !jac_hi.allFinite())
            throw std::invalid_argument("NonlinearMap: Jacobian bounds must be finite");
        if (output_dim > 0 && input_dim > 0 && (jac_hi - jac_lo).minCoeff() < 0.0)
            throw std::invalid_argument("NonlinearMap: jac_lo must be <= jac_hi");
        if (!expression && !fn)
            throw std::invalid_argument("NonlinearMap: neither expression nor callable given");
        if (expression)
            require_dims(static_cast<int>(expression->size()) == output_dim,
                         "NonlinearMap: expression row count must equal output_dim");
        if (domain)
            require_dims(domain->size() == input_dim, "NonlinearMap: domain dimension mismatch");
    }
};

[[nodiscard]] inline NonlinearMap make_expression_map(Expression expr, int input_dim,
                                                      std::optional<IntervalVec> domain = std::nullopt) {
    NonlinearMap m;
    m.input_dim = input_dim;
    m.output_dim = static_cast<int>(expr.size());
    expression_jacobian_bounds(expr, input_dim, domain, m.jac_lo, m.jac_hi);
    m.expression = std::move(expr);
    m.domain = std::move(domain);
    m.validate();
    return m;
}

[[nodiscard]] inline NonlinearMap make_callable_map(int input_dim, int output_dim,
                                                    std::function<Vec(const Vec&)> fn, Mat jac_lo,
                                                    Mat jac_hi,
                                                    std::optional<IntervalVec> domain = std::nullopt) {
    NonlinearMap m;
    m.input_dim = input_dim;
    m.output_dim = output_dim;
    m.fn = std::move(fn);
    m.jac_lo = std::move(jac_lo);
    m.jac_hi = std::move(jac_hi);
    m.domain = std::move(domain);
    m.validate();
    return m;
}

[[nodiscard]] inline NonlinearMap zero_map(int input_dim, int output_dim) {
    return make_expression_map(Expression(static_cast<std::size_t>(output_dim)), input_dim);
}

// ============================================================================
// Jacobian sign-stable decomposition
// ============================================================================

// Every entry interval lies in (-inf, 0] or in [0, inf).
[[nodiscard]] inline bool is_sign_stable(const Mat& jac_lo, const Mat& jac_hi) {
    for (Eigen::Index i = 0; i < jac_lo.rows(); ++i)
        for (Eigen::Index j = 0; j < jac_lo.cols(); ++j)
            if (!(jac_hi(i, j) <= 0.0 || jac_lo(i, j) >= 0.0))
                return false;
    return true;
}

enum class RemainderRule {
    SmallerMagnitude,  // per entry, whichever Jacobian bound has smaller |value|
    Upper,
    Lower,
};

struct JssDecomposition {
    Mat remainder;  // H: f(x) = H x + mu(x)
    NonlinearMap residual;
    Mat mu_jac_lo;
    Mat mu_jac_hi;
    // Diagonal of D^i for each output row i (entries 0 or 1).
    std::vector<Eigen::VectorXd> selectors;
    Mat bounding;  // F_mu

    [[nodiscard]] int input_dim() const { return residual.input_dim; }
    [[nodiscard]] int output_dim() const { return residual.output_dim; }
    [[nodiscard]] double gamma() const { return inf_norm(bounding); }
};

// D^i_jj = 1 iff the (i, j) entry is nondecreasing with a strictly positive
// upper bound. A nonincreasing entry with upper bound exactly 0 selects the
// second argument, otherwise mu_d(zhi, zlo) would no longer dominate mu.
[[nodiscard]] inline std::vector<Eigen::VectorXd> vertex_selectors(const Mat& jac_hi_mu,
                                                                    const Mat& jac_lo_mu) {
    require_dims(jac_hi_mu.rows() == jac_lo_mu.rows() && jac_hi_mu.cols() == jac_lo_mu.cols(),
                 "vertex_selectors: bound shapes differ");
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(jac_hi_mu.rows()));
    for (Eigen::Index i = 0; i < jac_hi_mu.rows(); ++i) {
        Eigen::VectorXd d(jac_hi_mu.cols());
        for (Eigen::Index j = 0; j < jac_hi_mu.cols(); ++j)
            d[j] = jac_hi_mu(i, j) > 0.0 ? 1.0 : 0.0;
        out.push_back(std::move(d));
    }
    return out;
}

[[nodiscard]] inline Mat bounding_matrix(const Mat& jac_hi_mu, const Mat& jac_lo_mu) {
    require_dims(jac_hi_mu.rows() == jac_lo_mu.rows() && jac_hi_mu.cols() == jac_lo_mu.cols(),
                 "bounding_matrix: bound shapes differ");
    return pos_part(jac_hi_mu) + neg_part(jac_lo_mu);
}

namespace detail {

inline JssDecomposition finish_decomposition(Mat remainder, NonlinearMap residual) {
    JssDecomposition d;
    d.remainder = std::move(remainder);
    d.mu_jac_lo = residual.jac_lo;
    d.mu_jac_hi = residual.jac_hi;
    if (!is_sign_stable(d.mu_jac_lo, d.mu_jac_hi))
        throw std::invalid_argument("decomposition: residual Jacobian is not sign-stable");
    d.selectors = vertex_selectors(d.mu_jac_hi, d.mu_jac_lo);
    d.bounding = bounding_matrix(d.mu_jac_hi, d.mu_jac_lo);
    d.residual = std::move(residual);
    return d;
}

}  // namespace detail

// f(x) = H x + mu(x) with H_ij taken from one of the two Jacobian bounds, so
// every residual Jacobian entry is sign-stable.
[[nodiscard]] inline JssDecomposition remainder_decompose(const NonlinearMap& map,
                                                          RemainderRule rule = RemainderRule::SmallerMagnitude) {
    map.validate();
    Mat H(map.output_dim, map.input_dim);
    for (int i = 0; i < map.output_dim; ++i) {
        for (int j = 0; j < map.input_dim; ++j) {
            const double up = map.jac_hi(i, j);
            const double lo = map.jac_lo(i, j);
            switch (rule) {
            case RemainderRule::Upper: H(i, j) = up; break;
            case RemainderRule::Lower: H(i, j) = lo; break;
            case RemainderRule::SmallerMagnitude: H(i, j) = std::abs(up) <= std::abs(lo) ? up : lo; break;
            }
        }
    }

    NonlinearMap mu;
    mu.input_dim = map.input_dim;
    mu.output_dim = map.output_dim;
    mu.jac_lo = map.jac_lo - H;
    mu.jac_hi = map.jac_hi - H;
    mu.domain = map.domain;
    if (map.expression) {
        Expression e = *map.expression;
        for (int i = 0; i < map.output_dim; ++i)
            for (int j = 0; j < map.input_dim; ++j)
                if (H(i, j) != 0.0)
                    e[static_cast<std::size_t>(i)].push_back({-H(i, j), TermKind::Lin, j});
        mu.expression = std::move(e);
    } else {
        mu.fn = [f = map.fn, H](const Vec& x) -> Vec { return f(x) - H * x; };
    }
    mu.validate();
    return detail::finish_decomposition(std::move(H), std::move(mu));
}

// Pre-decomposed input: the residual is supplied directly alongside its
// linear remainder (A or C), skipping the remainder selection.
[[nodiscard]] inline JssDecomposition pass_through(const NonlinearMap& residual, const Mat& remainder) {
    residual.validate();
    require_dims(remainder.rows() == residual.output_dim && remainder.cols() == residual.input_dim,
                 "pass_through: remainder shape must match the residual map");
    return detail::finish_decomposition(remainder, residual);
}

// mu_d,i(z1, z2) = mu_i(D^i z1 + (I - D^i) z2)
[[nodiscard]] inline Vec eval_decomposition(const JssDecomposition& d, const Vec& z1, const Vec& z2) {
    require_dims(z1.size() == d.input_dim() && z2.size() == d.input_dim(),
                 "eval_decomposition: argument dimension mismatch");
    Vec out(d.output_dim());
    Vec p(d.input_dim());
    for (int i = 0; i < d.output_dim(); ++i) {
        const auto& sel = d.selectors[static_cast<std::size_t>(i)];
        for (int j = 0; j < d.input_dim(); ++j)
            p[j] = sel[j] != 0.0 ? z1[j] : z2[j];
        out[i] = d.residual.row(i, p);
    }
    return out;
}

enum class RegularizePolicy { OnlyIfSingular, Always };

[[nodiscard]] inline bool is_singular(const Mat& F) {
    if (F.rows() == 0)
        return false;
    Eigen::JacobiSVD<Mat> svd(F);
    const auto& s = svd.singularValues();
    return s.minCoeff() <= 1e-12 * std::max(1.0, s.maxCoeff());
}

// F + eps0 I dominates F elementwise, so it still bounds the decomposition
// spread; with eps0 > 0 added to a nonnegative matrix it is used as F_phi.
[[nodiscard]] inline Mat regularize_bounding(const Mat& F, double eps0,
                                             RegularizePolicy policy = RegularizePolicy::OnlyIfSingular) {
    require_dims(F.rows() == F.cols(), "regularize_bounding: F must be square");
    if (!(eps0 > 0.0))
        throw std::invalid_argument("regularize_bounding: eps0 must be positive");
    if (policy == RegularizePolicy::OnlyIfSingular && !is_singular(F))
        return F;
    Mat out = F + eps0 * Mat::Identity(F.rows(), F.cols());
    // eps0 can coincide with a negative eigenvalue of F; grow the shift until
    // the result is invertible.
    for (double shift = eps0; is_singular(out);) {
        shift *= 2.0;
        out = F + shift * Mat::Identity(F.rows(), F.cols());
    }
    return out;
}

}  // namespace ivctl
