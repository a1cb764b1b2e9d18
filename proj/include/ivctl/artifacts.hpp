#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "controller.hpp"
#include "matops.hpp"

namespace ivctl {

// ============================================================================
// Gains file
// ============================================================================
// Written by `synthesize`, read by `simulate` and `verify`. Q and mu_star are
// the SDP solution. P and mu_certified hold the certificate actually checked:
// P = Q^-1 when that works, otherwise one found for the fixed gains.
// Hand-written files may omit all four; `verify` then searches for one.

struct GainsFile {
    Mat L;
    ControllerGains gains;
    std::optional<Mat> Q;
    std::optional<double> mu_star;
    std::optional<Mat> P;
    std::optional<double> mu_certified;
    double alpha = 0.1;
    double epsilon = 0.0;
    double gamma = 0.0;
    std::string mode;  // free | structured | given
    double replica_deviation = 0.0;
};

[[nodiscard]] inline json to_json(const GainsFile& g) {
    json j = {{"L", to_json(g.L)},
              {"controller", to_json(g.gains)},
              {"alpha", g.alpha},
              {"epsilon", g.epsilon},
              {"gamma", g.gamma},
              {"mode", g.mode},
              {"replica_deviation", g.replica_deviation}};
    if (g.Q)
        j["Q"] = to_json(*g.Q);
    if (g.mu_star)
        j["mu_star"] = *g.mu_star;
    if (g.P)
        j["P"] = to_json(*g.P);
    if (g.mu_certified)
        j["mu_certified"] = *g.mu_certified;
    return j;
}

inline void write_gains_file(const std::string& path, const GainsFile& g) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << to_json(g).dump(2) << "\n";
}

// n, m, l come from the model the gains are meant for.
[[nodiscard]] inline GainsFile parse_gains_text(const std::string& text, int n, int m, int l,
                                                const std::string& source = "<gains>") {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError({source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what()});
    }
    if (!j.is_object())
        throw ConfigError({source + ": top level must be an object"});
    detail::Reader rd;
    rd.check_keys(j, "", {"L", "controller", "Q", "mu_star", "P", "mu_certified", "alpha", "epsilon", "gamma", "mode", "replica_deviation"});
    GainsFile g;
    if (!j.contains("L"))
        rd.error("L", "missing");
    else if (auto L = rd.matrix(j["L"], "L")) {
        g.L = *L;
        if (L->rows() != n || L->cols() != l)
            rd.error("L", "must be " + std::to_string(n) + "x" + std::to_string(l));
    }
    if (!j.contains("controller") || !j["controller"].is_object()) {
        rd.error("controller", "missing or not an object");
    } else {
        const json& c = j["controller"];
        const std::array<std::pair<const char*, Mat*>, 8> slots = {{{"A_c", &g.gains.A_c},
                                                                    {"Kb_hi", &g.gains.Kb_hi},
                                                                    {"Kb_lo", &g.gains.Kb_lo},
                                                                    {"C_c", &g.gains.C_c},
                                                                    {"Kd_hi", &g.gains.Kd_hi},
                                                                    {"Kd_lo", &g.gains.Kd_lo},
                                                                    {"Kx_nu", &g.gains.Kx_nu},
                                                                    {"Ku_nu", &g.gains.Ku_nu}}};
        bool ok = true;
        for (const auto& [key, dst] : slots) {
            if (!c.contains(key)) {
                rd.error(std::string("controller.") + key, "missing");
                ok = false;
            } else if (auto M = rd.matrix(c[key], std::string("controller.") + key)) {
                *dst = *M;
            } else {
                ok = false;
            }
        }
        if (ok)
            for (const auto& p : g.gains.problems(n, m))
                rd.error("controller", p);
    }
    if (j.contains("Q")) {
        if (auto Q = rd.matrix(j["Q"], "Q")) {
            if (Q->rows() != 5 * n || Q->cols() != 5 * n)
                rd.error("Q", "must be 5n x 5n = " + std::to_string(5 * n) + "x" + std::to_string(5 * n));
            else
                g.Q = *Q;
        }
    }
    if (j.contains("P")) {
        if (auto P = rd.matrix(j["P"], "P")) {
            if (P->rows() != 5 * n || P->cols() != 5 * n)
                rd.error("P", "must be 5n x 5n = " + std::to_string(5 * n) + "x" + std::to_string(5 * n));
            else
                g.P = *P;
        }
    }
    if (j.contains("mu_certified"))
        if (auto v = rd.number(j["mu_certified"], "mu_certified"))
            g.mu_certified = *v;
    auto num = [&](const char* key, double& dst) {
        if (j.contains(key))
            if (auto v = rd.number(j[key], key))
                dst = *v;
    };
    if (j.contains("mu_star"))
        if (auto v = rd.number(j["mu_star"], "mu_star"))
            g.mu_star = *v;
    num("alpha", g.alpha);
    num("epsilon", g.epsilon);
    num("gamma", g.gamma);
    num("replica_deviation", g.replica_deviation);
    if (!(g.alpha > 0.0))
        rd.error("alpha", "must be positive");
    g.mode = j.value("mode", std::string("given"));
    if (!rd.errors.empty()) {
        for (auto& e : rd.errors)
            e = source + ": " + e;
        throw ConfigError(rd.errors);
    }
    return g;
}

[[nodiscard]] inline GainsFile parse_gains_file(const std::string& path, int n, int m, int l) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError({path + ": cannot open file"});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_gains_text(ss.str(), n, m, l, path);
}

// ============================================================================
// Trajectory CSV
// ============================================================================
// Long format, one row per (run, step):
//   run,step,x_1..x_n,xhi_1..xhi_n,xlo_1..xlo_n,u_1..u_m,y_1..y_l
// u and y are the values applied and measured at that step; they are empty
// on the final row of each run. Numbers use %.17g so they round-trip.

struct RunRecord {
    std::vector<Vec> x, hi, lo, u, y;

    [[nodiscard]] int steps() const { return static_cast<int>(x.size()) - 1; }
};

[[nodiscard]] inline RunRecord to_record(const ClosedLoopTrajectory& t) { return {t.x, t.hi, t.lo, t.u, t.y}; }

[[nodiscard]] inline std::string csv_header(int n, int m, int l) {
    std::string h = "run,step";
    for (const char* p : {"x_", "xhi_", "xlo_"})
        for (int i = 1; i <= n; ++i)
            h += "," + std::string(p) + std::to_string(i);
    for (int j = 1; j <= m; ++j)
        h += ",u_" + std::to_string(j);
    for (int p = 1; p <= l; ++p)
        h += ",y_" + std::to_string(p);
    return h;
}

namespace detail {

inline void put(std::string& line, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    line += ',';
    line += buf;
}

}  // namespace detail

inline void write_trajectories_csv(std::ostream& out, const std::vector<RunRecord>& runs, int n, int m, int l) {
    out << csv_header(n, m, l) << "\n";
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto& t = runs[r];
        for (std::size_t k = 0; k < t.x.size(); ++k) {
            std::string line = std::to_string(r) + "," + std::to_string(k);
            for (const auto* seq : {&t.x, &t.hi, &t.lo})
                for (Eigen::Index i = 0; i < n; ++i)
                    detail::put(line, (*seq)[k][i]);
            const bool has_io = k < t.u.size();
            for (Eigen::Index j = 0; j < m; ++j) {
                if (has_io)
                    detail::put(line, t.u[k][j]);
                else
                    line += ',';
            }
            for (Eigen::Index p = 0; p < l; ++p) {
                if (has_io)
                    detail::put(line, t.y[k][p]);
                else
                    line += ',';
            }
            out << line << "\n";
        }
    }
}

inline void write_trajectories_csv(const std::string& path, const std::vector<RunRecord>& runs, int n, int m, int l) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    write_trajectories_csv(out, runs, n, m, l);
}

[[nodiscard]] inline std::vector<RunRecord> read_trajectories_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(path + ": empty file");
    int n = 0, m = 0, l = 0;
    {
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) {
            if (col.rfind("x_", 0) == 0)
                ++n;
            else if (col.rfind("u_", 0) == 0)
                ++m;
            else if (col.rfind("y_", 0) == 0)
                ++l;
        }
    }
    if (line != csv_header(n, m, l))
        throw std::runtime_error(path + ": unexpected header");
    std::vector<RunRecord> runs;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (!line.empty() && line.back() == ',')
            cells.emplace_back();
        if (static_cast<int>(cells.size()) != 2 + 3 * n + m + l)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": wrong number of columns");
        const auto run = static_cast<std::size_t>(std::stoul(cells[0]));
        const auto step = static_cast<std::size_t>(std::stoul(cells[1]));
        if (run == runs.size())
            runs.emplace_back();
        if (run + 1 != runs.size() || step != runs.back().x.size())
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": rows out of order");
        auto vec = [&](std::size_t start, int len) {
            Vec v(len);
            for (int i = 0; i < len; ++i)
                v[i] = std::strtod(cells[start + static_cast<std::size_t>(i)].c_str(), nullptr);
            return v;
        };
        auto& r = runs.back();
        r.x.push_back(vec(2, n));
        r.hi.push_back(vec(2 + static_cast<std::size_t>(n), n));
        r.lo.push_back(vec(2 + 2 * static_cast<std::size_t>(n), n));
        const std::size_t uo = 2 + 3 * static_cast<std::size_t>(n);
        if (m + l > 0 && !cells[uo].empty()) {
            r.u.push_back(vec(uo, m));
            r.y.push_back(vec(uo + static_cast<std::size_t>(m), l));
        }
    }
    return runs;
}

// ============================================================================
// Summary metrics
// ============================================================================
// Everything here is a function of the CSV contents plus the horizon, so a
// re-read CSV reproduces it exactly.

struct SimulationSummary {
    int runs = 0;
    int horizon = 0;
    int contained_runs = 0;
    double containment_rate = 0.0;
    int truncated_runs = 0;
    double mean_width = 0.0;
    double max_width = 0.0;
    double min_width = 0.0;
    double max_state_norm = 0.0;
    // sup over runs of |xhi_k - xlo_k|_inf, k = 0 .. horizon (NaN where no run reached k)
    std::vector<double> sup_width_by_step;
};

[[nodiscard]] inline SimulationSummary summarize(const std::vector<RunRecord>& runs, int horizon) {
    SimulationSummary s;
    s.runs = static_cast<int>(runs.size());
    s.horizon = horizon;
    s.sup_width_by_step.assign(static_cast<std::size_t>(horizon) + 1, std::numeric_limits<double>::quiet_NaN());
    s.min_width = std::numeric_limits<double>::infinity();
    double width_sum = 0.0;
    long long width_count = 0;
    for (const auto& r : runs) {
        bool contained = true;
        for (std::size_t k = 0; k < r.x.size(); ++k) {
            const FramerState fs{r.hi[k], r.lo[k]};
            contained = contained && fs.contains(r.x[k]);
            const Vec w = fs.width();
            width_sum += w.sum();
            width_count += w.size();
            s.max_width = std::max(s.max_width, w.maxCoeff());
            s.min_width = std::min(s.min_width, w.minCoeff());
            s.max_state_norm = std::max(s.max_state_norm, r.x[k].cwiseAbs().maxCoeff());
            if (k < s.sup_width_by_step.size()) {
                double& slot = s.sup_width_by_step[k];
                slot = std::isnan(slot) ? w.maxCoeff() : std::max(slot, w.maxCoeff());
            }
        }
        s.contained_runs += contained ? 1 : 0;
        s.truncated_runs += r.steps() < horizon ? 1 : 0;
    }
    s.containment_rate = s.runs ? static_cast<double>(s.contained_runs) / s.runs : 0.0;
    s.mean_width = width_count ? width_sum / static_cast<double>(width_count) : 0.0;
    if (width_count == 0)
        s.min_width = 0.0;
    return s;
}

[[nodiscard]] inline json to_json(const SimulationSummary& s) {
    json steps = json::array();
    for (double v : s.sup_width_by_step)
        steps.push_back(std::isnan(v) ? json(nullptr) : json(v));
    return {{"runs", s.runs},
            {"horizon", s.horizon},
            {"contained_runs", s.contained_runs},
            {"containment_rate", s.containment_rate},
            {"truncated_runs", s.truncated_runs},
            {"mean_width", s.mean_width},
            {"max_width", s.max_width},
            {"min_width", s.min_width},
            {"max_state_norm", s.max_state_norm},
            {"sup_width_by_step", steps}};
}

// True when the last `window` entries of the per-step sup width are finite
// and never rise more than `slack` above the running minimum of the window.
[[nodiscard]] inline bool widths_settled(const std::vector<double>& sup_width, int window = 20, double slack = 0.05) {
    if (static_cast<int>(sup_width.size()) < window)
        return false;
    double lowest = std::numeric_limits<double>::infinity();
    for (auto it = sup_width.end() - window; it != sup_width.end(); ++it) {
        if (!std::isfinite(*it))
            return false;
        if (*it > (1.0 + slack) * lowest)
            return false;
        lowest = std::min(lowest, *it);
    }
    return true;
}

}  // namespace ivctl
