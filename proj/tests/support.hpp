#pragma once

// Shared fixtures for the unit tests. Oracles here are written independently
// of the library: explicit loops, no calls into the code under test.

#include <cmath>
#include <random>
#include <string>

#include <ivctl/config.hpp>

namespace test {

using ivctl::Mat;
using ivctl::Vec;

inline std::string model_path(const std::string& name) {
    return std::string(IVCTL_SOURCE_DIR) + "/models/" + name + ".json";
}

inline ivctl::ModelConfig load(const std::string& name) { return ivctl::parse_config(model_path(name)); }

inline Mat random_mat(std::mt19937_64& gen, int r, int c, double scale = 1.0) {
    std::uniform_real_distribution<double> d(-scale, scale);
    Mat M(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            M(i, j) = d(gen);
    return M;
}

inline Vec random_vec(std::mt19937_64& gen, int n, double scale = 1.0) { return random_mat(gen, n, 1, scale); }

inline double max_abs(const Mat& M) { return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff(); }

// Residuals of the five-state benchmark, written out by hand.
inline Vec example5_phi(const Vec& x) {
    Vec p(5);
    p << 0.1 * (std::sin(x[2]) - x[2]), 0.2 * (std::sin(x[3]) - x[3]), 0.3 * (std::sin(x[0]) - x[0]), 0.0,
        0.1 * (std::sin(x[1]) - x[1]);
    return p;
}

inline Vec example5_psi(const Vec& x) {
    Vec p(2);
    p << 0.1 * (std::cos(x[0]) - x[0]), 0.2 * (std::cos(x[1]) + x[1]);
    return p;
}

// Decomposition functions of the benchmark residuals. Every phi entry is
// nonincreasing, so each row reads the second argument. psi row 1 is
// nonincreasing in x1; psi row 2 is nondecreasing in x2 (0.2(1 - sin) >= 0).
inline Vec example5_phi_d(const Vec&, const Vec& z2) { return example5_phi(z2); }

inline Vec example5_psi_d(const Vec& z1, const Vec& z2) {
    Vec p(2);
    p << 0.1 * (std::cos(z2[0]) - z2[0]), 0.2 * (std::cos(z1[1]) + z1[1]);
    return p;
}

inline Mat pos(const Mat& M) {
    Mat out = M;
    for (int i = 0; i < M.rows(); ++i)
        for (int j = 0; j < M.cols(); ++j)
            out(i, j) = M(i, j) > 0.0 ? M(i, j) : 0.0;
    return out;
}

inline Mat neg(const Mat& M) {
    Mat out = M;
    for (int i = 0; i < M.rows(); ++i)
        for (int j = 0; j < M.cols(); ++j)
            out(i, j) = M(i, j) < 0.0 ? -M(i, j) : 0.0;
    return out;
}

}  // namespace test
