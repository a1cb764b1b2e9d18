#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "controller.hpp"
#include "decomp.hpp"
#include "matops.hpp"
#include "observer.hpp"
#include "plant.hpp"

namespace ivctl {

using json = nlohmann::json;

// Every problem found while reading a config, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors)
        : std::runtime_error(join(errors)), errors_(std::move(errors)) {}

    [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

private:
    static std::string join(const std::vector<std::string>& e) {
        std::string s = "invalid configuration (" + std::to_string(e.size()) + " error" + (e.size() == 1 ? "" : "s") + "):";
        for (const auto& x : e)
            s += "\n  - " + x;
        return s;
    }
    std::vector<std::string> errors_;
};

struct SimulationConfig {
    int horizon = 100;
    int runs = 100;
    std::uint64_t seed = 1;
    NoiseScheme noise = NoiseScheme::Uniform;
    InitialState x0 = InitialState::Midpoint;

    friend bool operator==(const SimulationConfig&, const SimulationConfig&) = default;
};

struct SynthesisConfig {
    double alpha = 0.1;
    double eps0 = 1e-3;
    RegularizePolicy regularize = RegularizePolicy::OnlyIfSingular;
    int observer_search_budget = 20000;

    friend bool operator==(const SynthesisConfig&, const SynthesisConfig&) = default;
};

// Nonlinearities are stored in the file with 1-based variable indices.
struct ModelConfig {
    std::string name;
    std::vector<std::string> notes;
    bool pre_decomposed = true;
    // A and C are given when pre-decomposed; otherwise they are the
    // remainders of f and g.
    Mat A, B, C, D, W, V;
    Expression phi, psi;  // pre-decomposed residuals
    Expression f, g;      // raw maps
    std::optional<IntervalVec> domain;
    IntervalVec w_box, v_box, x0_box;
    std::optional<Mat> L;  // n x l, after orientation
    bool L_transposed = false;
    std::optional<ControllerGains> gains;
    SynthesisConfig synthesis;
    SimulationConfig simulation;

    [[nodiscard]] SystemModel model() const {
        const int n = static_cast<int>(pre_decomposed ? A.rows() : f.size());
        if (pre_decomposed) {
            SystemModel m{name, A, B, C, D, W, V, make_expression_map(phi, n, domain),
                          make_expression_map(psi, n, domain), w_box, v_box, x0_box};
            m.validate();
            return m;
        }
        return model_from_raw(name, make_expression_map(f, n, domain), make_expression_map(g, n, domain), B, D, W,
                              V, w_box, v_box, x0_box);
    }

    [[nodiscard]] Decompositions decompositions() const {
        return decompose_model(model(), synthesis.eps0, synthesis.regularize);
    }

    [[nodiscard]] std::optional<ObserverGain> observer() const {
        if (!L)
            return std::nullopt;
        return ObserverGain{*L};
    }
};

namespace detail {

inline bool mat_equal(const Mat& a, const Mat& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

inline bool box_equal(const IntervalVec& a, const IntervalVec& b) {
    return mat_equal(a.lo, b.lo) && mat_equal(a.hi, b.hi);
}

inline bool gains_equal(const ControllerGains& a, const ControllerGains& b) {
    return mat_equal(a.A_c, b.A_c) && mat_equal(a.Kb_hi, b.Kb_hi) && mat_equal(a.Kb_lo, b.Kb_lo) &&
           mat_equal(a.C_c, b.C_c) && mat_equal(a.Kd_hi, b.Kd_hi) && mat_equal(a.Kd_lo, b.Kd_lo) &&
           mat_equal(a.Kx_nu, b.Kx_nu) && mat_equal(a.Ku_nu, b.Ku_nu);
}

}  // namespace detail

[[nodiscard]] inline bool structurally_equal(const ModelConfig& a, const ModelConfig& b) {
    using detail::box_equal;
    using detail::mat_equal;
    auto opt_eq = [](const auto& x, const auto& y, auto eq) {
        return x.has_value() == y.has_value() && (!x || eq(*x, *y));
    };
    return a.name == b.name && a.notes == b.notes && a.pre_decomposed == b.pre_decomposed &&
           mat_equal(a.A, b.A) && mat_equal(a.B, b.B) && mat_equal(a.C, b.C) && mat_equal(a.D, b.D) &&
           mat_equal(a.W, b.W) && mat_equal(a.V, b.V) && a.phi == b.phi && a.psi == b.psi && a.f == b.f &&
           a.g == b.g && opt_eq(a.domain, b.domain, box_equal) && box_equal(a.w_box, b.w_box) &&
           box_equal(a.v_box, b.v_box) && box_equal(a.x0_box, b.x0_box) && opt_eq(a.L, b.L, mat_equal) &&
           a.L_transposed == b.L_transposed && opt_eq(a.gains, b.gains, detail::gains_equal) &&
           a.synthesis == b.synthesis && a.simulation == b.simulation;
}

// ============================================================================
// JSON helpers
// ============================================================================

[[nodiscard]] inline json to_json(const Mat& M) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j)
            r.push_back(M(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

[[nodiscard]] inline json to_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(v[i]);
    return a;
}

[[nodiscard]] inline json to_json(const IntervalVec& b) { return {{"lo", to_json(b.lo)}, {"hi", to_json(b.hi)}}; }

[[nodiscard]] inline json to_json(const ControllerGains& g) {
    return {{"A_c", to_json(g.A_c)},     {"Kb_hi", to_json(g.Kb_hi)}, {"Kb_lo", to_json(g.Kb_lo)},
            {"C_c", to_json(g.C_c)},     {"Kd_hi", to_json(g.Kd_hi)}, {"Kd_lo", to_json(g.Kd_lo)},
            {"Kx_nu", to_json(g.Kx_nu)}, {"Ku_nu", to_json(g.Ku_nu)}};
}

// Expressions are written with 1-based variable indices.
[[nodiscard]] inline json expression_to_json(const Expression& e) {
    json rows = json::array();
    for (const auto& row : e) {
        json r = json::array();
        for (const auto& t : row) {
            json term = {{"coef", t.coef}, {"kind", to_string(t.kind)}};
            if (t.kind != TermKind::Const)
                term["var"] = t.var + 1;
            r.push_back(std::move(term));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

[[nodiscard]] inline std::string to_string(NoiseScheme s) {
    switch (s) {
    case NoiseScheme::Uniform: return "uniform";
    case NoiseScheme::Extreme: return "extreme";
    case NoiseScheme::Zero: return "zero";
    }
    return "uniform";
}

// Canonical form: fixed key set, keys sorted, defaults written out.
[[nodiscard]] inline json to_json(const ModelConfig& c) {
    json j;
    j["name"] = c.name;
    if (!c.notes.empty())
        j["notes"] = c.notes;
    j["pre_decomposed"] = c.pre_decomposed;
    json mats = {{"B", to_json(c.B)}, {"D", to_json(c.D)}, {"W", to_json(c.W)}, {"V", to_json(c.V)}};
    if (c.pre_decomposed) {
        mats["A"] = to_json(c.A);
        mats["C"] = to_json(c.C);
        j["phi"] = expression_to_json(c.phi);
        j["psi"] = expression_to_json(c.psi);
    } else {
        j["f"] = expression_to_json(c.f);
        j["g"] = expression_to_json(c.g);
    }
    j["matrices"] = std::move(mats);
    if (c.domain)
        j["domain"] = to_json(*c.domain);
    j["noise"] = {{"w", to_json(c.w_box)}, {"v", to_json(c.v_box)}};
    j["x0"] = to_json(c.x0_box);
    if (c.L)
        j["observer"] = {{"L", to_json(c.L_transposed ? Mat(c.L->transpose()) : *c.L)},
                         {"transposed", c.L_transposed}};
    if (c.gains)
        j["controller"] = to_json(*c.gains);
    j["synthesis"] = {{"alpha", c.synthesis.alpha},
                      {"eps0", c.synthesis.eps0},
                      {"regularize", c.synthesis.regularize == RegularizePolicy::Always ? "always" : "only_if_singular"},
                      {"observer_search_budget", c.synthesis.observer_search_budget}};
    j["simulation"] = {{"horizon", c.simulation.horizon},
                       {"runs", c.simulation.runs},
                       {"seed", c.simulation.seed},
                       {"noise", to_string(c.simulation.noise)},
                       {"x0", c.simulation.x0 == InitialState::Midpoint ? "midpoint" : "uniform"}};
    return j;
}

[[nodiscard]] inline std::string canonical_dump(const ModelConfig& c) { return to_json(c).dump(2) + "\n"; }

// ============================================================================
// Parsing
// ============================================================================

namespace detail {

class Reader {
public:
    std::vector<std::string> errors;

    void error(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

    void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
        if (!j.is_object())
            return;
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [k, _] : j.items())
            if (!ok.count(k))
                error(path.empty() ? k : path + "." + k, "unknown field");
    }

    std::optional<double> number(const json& j, const std::string& path) {
        if (!j.is_number()) {
            error(path, "expected a number");
            return std::nullopt;
        }
        const double v = j.get<double>();
        if (!std::isfinite(v)) {
            error(path, "must be finite");
            return std::nullopt;
        }
        return v;
    }

    std::optional<Mat> matrix(const json& j, const std::string& path) {
        if (!j.is_array()) {
            error(path, "expected a matrix (array of rows)");
            return std::nullopt;
        }
        const auto rows = j.size();
        std::size_t cols = rows ? (j[0].is_array() ? j[0].size() : 0) : 0;
        Mat M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        bool ok = true;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::string rp = path + "[" + std::to_string(r) + "]";
            if (!j[r].is_array()) {
                error(rp, "expected a row (array of numbers)");
                ok = false;
                continue;
            }
            if (j[r].size() != cols) {
                error(rp, "row has " + std::to_string(j[r].size()) + " entries, expected " + std::to_string(cols));
                ok = false;
                continue;
            }
            for (std::size_t c = 0; c < cols; ++c) {
                auto v = number(j[r][c], rp + "[" + std::to_string(c) + "]");
                if (v)
                    M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
                else
                    ok = false;
            }
        }
        if (!ok)
            return std::nullopt;
        return M;
    }

    std::optional<Vec> vector(const json& j, const std::string& path) {
        if (!j.is_array()) {
            error(path, "expected an array of numbers");
            return std::nullopt;
        }
        Vec v(static_cast<Eigen::Index>(j.size()));
        bool ok = true;
        for (std::size_t i = 0; i < j.size(); ++i) {
            auto x = number(j[i], path + "[" + std::to_string(i) + "]");
            if (x)
                v[static_cast<Eigen::Index>(i)] = *x;
            else
                ok = false;
        }
        if (!ok)
            return std::nullopt;
        return v;
    }

    std::optional<IntervalVec> box(const json& j, const std::string& path) {
        if (!j.is_object() || !j.contains("lo") || !j.contains("hi")) {
            error(path, "expected an object with \"lo\" and \"hi\" arrays");
            return std::nullopt;
        }
        check_keys(j, path, {"lo", "hi"});
        auto lo = vector(j["lo"], path + ".lo");
        auto hi = vector(j["hi"], path + ".hi");
        if (!lo || !hi)
            return std::nullopt;
        if (lo->size() != hi->size()) {
            error(path, "lo and hi differ in length");
            return std::nullopt;
        }
        for (Eigen::Index i = 0; i < lo->size(); ++i)
            if ((*lo)[i] > (*hi)[i]) {
                error(path, "lo[" + std::to_string(i) + "] > hi[" + std::to_string(i) + "]");
                return std::nullopt;
            }
        return IntervalVec(*lo, *hi);
    }

    // Variable indices are validated against n later, once n is known.
    std::optional<Expression> expression(const json& j, const std::string& path) {
        if (!j.is_array()) {
            error(path, "expected an array of rows, each an array of terms");
            return std::nullopt;
        }
        Expression e;
        bool ok = true;
        for (std::size_t r = 0; r < j.size(); ++r) {
            const std::string rp = path + "[" + std::to_string(r) + "]";
            ExprRow row;
            if (!j[r].is_array()) {
                error(rp, "expected an array of terms");
                ok = false;
                continue;
            }
            for (std::size_t t = 0; t < j[r].size(); ++t) {
                const std::string tp = rp + "[" + std::to_string(t) + "]";
                const json& term = j[r][t];
                if (!term.is_object()) {
                    error(tp, "expected a term object {coef, kind, var}");
                    ok = false;
                    continue;
                }
                check_keys(term, tp, {"coef", "kind", "var"});
                Term out;
                if (!term.contains("coef")) {
                    error(tp, "missing \"coef\"");
                    ok = false;
                } else if (auto c = number(term["coef"], tp + ".coef")) {
                    out.coef = *c;
                } else {
                    ok = false;
                }
                std::optional<TermKind> kind;
                if (!term.contains("kind") || !term["kind"].is_string()) {
                    error(tp, "missing or non-string \"kind\"");
                } else {
                    kind = parse_term_kind(term["kind"].get<std::string>());
                    if (!kind)
                        error(tp + ".kind", "unknown term kind \"" + term["kind"].get<std::string>() +
                                                "\" (expected sin, cos, lin or const)");
                }
                if (!kind) {
                    ok = false;
                    continue;
                }
                out.kind = *kind;
                if (out.kind != TermKind::Const) {
                    if (!term.contains("var") || !term["var"].is_number_integer()) {
                        error(tp, "missing or non-integer \"var\" (1-based)");
                        ok = false;
                        continue;
                    }
                    out.var = term["var"].get<int>() - 1;
                }
                row.push_back(out);
            }
            e.push_back(std::move(row));
        }
        if (!ok)
            return std::nullopt;
        return e;
    }

    void check_vars(const Expression& e, int n, const std::string& path) {
        for (std::size_t r = 0; r < e.size(); ++r)
            for (std::size_t t = 0; t < e[r].size(); ++t)
                if (e[r][t].kind != TermKind::Const && (e[r][t].var < 0 || e[r][t].var >= n))
                    error(path + "[" + std::to_string(r) + "][" + std::to_string(t) + "].var",
                          "index " + std::to_string(e[r][t].var + 1) + " out of range 1.." + std::to_string(n));
    }
};

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

[[nodiscard]] inline ModelConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError({source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what()});
    }
    detail::Reader rd;
    ModelConfig c;
    if (!j.is_object())
        throw ConfigError({source + ": top level must be an object"});
    rd.check_keys(j, "", {"name", "notes", "pre_decomposed", "matrices", "phi", "psi", "f", "g", "domain", "noise",
                          "x0", "observer", "controller", "synthesis", "simulation"});

    if (j.contains("name") && j["name"].is_string())
        c.name = j["name"].get<std::string>();
    else
        rd.error("name", "missing or non-string");
    if (j.contains("notes")) {
        if (j["notes"].is_array() && std::all_of(j["notes"].begin(), j["notes"].end(), [](const json& x) { return x.is_string(); }))
            c.notes = j["notes"].get<std::vector<std::string>>();
        else
            rd.error("notes", "expected an array of strings");
    }
    if (j.contains("pre_decomposed")) {
        if (j["pre_decomposed"].is_boolean())
            c.pre_decomposed = j["pre_decomposed"].get<bool>();
        else
            rd.error("pre_decomposed", "expected true or false");
    }

    // Matrices.
    const json mats = j.value("matrices", json::object());
    if (!j.contains("matrices"))
        rd.error("matrices", "missing");
    const std::vector<std::string> needed = c.pre_decomposed ? std::vector<std::string>{"A", "B", "C", "D", "W", "V"}
                                                              : std::vector<std::string>{"B", "D", "W", "V"};
    rd.check_keys(mats, "matrices", {"A", "B", "C", "D", "W", "V"});
    bool mats_ok = true;
    auto get_mat = [&](const std::string& key, Mat& dst) {
        if (!mats.contains(key)) {
            rd.error("matrices." + key, "missing");
            mats_ok = false;
            return;
        }
        if (auto M = rd.matrix(mats[key], "matrices." + key))
            dst = *M;
        else
            mats_ok = false;
    };
    for (const auto& key : needed) {
        Mat* dst = key == "A" ? &c.A : key == "B" ? &c.B : key == "C" ? &c.C : key == "D" ? &c.D : key == "W" ? &c.W : &c.V;
        get_mat(key, *dst);
    }
    if (!c.pre_decomposed && (mats.contains("A") || mats.contains("C")))
        rd.error("matrices", "A and C are derived from f and g when pre_decomposed is false; remove them");

    // Nonlinearities.
    bool expr_ok = true;
    auto get_expr = [&](const char* key, Expression& dst) {
        if (!j.contains(key)) {
            rd.error(key, "missing");
            expr_ok = false;
            return;
        }
        if (auto e = rd.expression(j[key], key))
            dst = *e;
        else
            expr_ok = false;
    };
    if (c.pre_decomposed) {
        get_expr("phi", c.phi);
        get_expr("psi", c.psi);
        for (const char* k : {"f", "g"})
            if (j.contains(k))
                rd.error(k, "only valid with pre_decomposed = false");
    } else {
        get_expr("f", c.f);
        get_expr("g", c.g);
        for (const char* k : {"phi", "psi"})
            if (j.contains(k))
                rd.error(k, "only valid with pre_decomposed = true");
    }

    if (j.contains("domain"))
        c.domain = rd.box(j["domain"], "domain");

    // Noise and initial box.
    if (!j.contains("noise") || !j["noise"].is_object()) {
        rd.error("noise", "missing or not an object with \"w\" and \"v\" boxes");
    } else {
        rd.check_keys(j["noise"], "noise", {"w", "v"});
        for (const char* k : {"w", "v"}) {
            if (!j["noise"].contains(k)) {
                rd.error(std::string("noise.") + k, "missing");
                continue;
            }
            if (auto b = rd.box(j["noise"][k], std::string("noise.") + k))
                (k[0] == 'w' ? c.w_box : c.v_box) = *b;
        }
    }
    if (!j.contains("x0"))
        rd.error("x0", "missing");
    else if (auto b = rd.box(j["x0"], "x0"))
        c.x0_box = *b;

    // Observer gain.
    if (j.contains("observer")) {
        const json& o = j["observer"];
        rd.check_keys(o, "observer", {"L", "transposed"});
        if (!o.is_object() || !o.contains("L")) {
            rd.error("observer", "expected an object with \"L\"");
        } else {
            c.L_transposed = o.value("transposed", false);
            if (auto L = rd.matrix(o["L"], "observer.L"))
                c.L = c.L_transposed ? Mat(L->transpose()) : *L;
        }
    }

    // Controller gains.
    if (j.contains("controller")) {
        const json& g = j["controller"];
        rd.check_keys(g, "controller", {"A_c", "Kb_hi", "Kb_lo", "C_c", "Kd_hi", "Kd_lo", "Kx_nu", "Ku_nu"});
        ControllerGains out;
        bool ok = g.is_object();
        if (!ok)
            rd.error("controller", "expected an object of gain matrices");
        const std::array<std::pair<const char*, Mat*>, 8> slots = {{{"A_c", &out.A_c},
                                                                    {"Kb_hi", &out.Kb_hi},
                                                                    {"Kb_lo", &out.Kb_lo},
                                                                    {"C_c", &out.C_c},
                                                                    {"Kd_hi", &out.Kd_hi},
                                                                    {"Kd_lo", &out.Kd_lo},
                                                                    {"Kx_nu", &out.Kx_nu},
                                                                    {"Ku_nu", &out.Ku_nu}}};
        for (const auto& [key, dst] : slots) {
            if (!ok)
                break;
            if (!g.contains(key)) {
                rd.error(std::string("controller.") + key, "missing");
                ok = false;
            } else if (auto M = rd.matrix(g[key], std::string("controller.") + key)) {
                *dst = *M;
            } else {
                ok = false;
            }
        }
        if (ok)
            c.gains = out;
    }

    if (j.contains("synthesis")) {
        const json& s = j["synthesis"];
        rd.check_keys(s, "synthesis", {"alpha", "eps0", "regularize", "observer_search_budget"});
        if (s.contains("alpha"))
            if (auto v = rd.number(s["alpha"], "synthesis.alpha")) {
                if (*v > 0.0)
                    c.synthesis.alpha = *v;
                else
                    rd.error("synthesis.alpha", "must be positive");
            }
        if (s.contains("eps0"))
            if (auto v = rd.number(s["eps0"], "synthesis.eps0")) {
                if (*v > 0.0)
                    c.synthesis.eps0 = *v;
                else
                    rd.error("synthesis.eps0", "must be positive");
            }
        if (s.contains("regularize")) {
            const auto r = s["regularize"].is_string() ? s["regularize"].get<std::string>() : "";
            if (r == "always")
                c.synthesis.regularize = RegularizePolicy::Always;
            else if (r == "only_if_singular")
                c.synthesis.regularize = RegularizePolicy::OnlyIfSingular;
            else
                rd.error("synthesis.regularize", "expected \"only_if_singular\" or \"always\"");
        }
        if (s.contains("observer_search_budget")) {
            if (s["observer_search_budget"].is_number_integer() && s["observer_search_budget"].get<int>() >= 1)
                c.synthesis.observer_search_budget = s["observer_search_budget"].get<int>();
            else
                rd.error("synthesis.observer_search_budget", "expected a positive integer");
        }
    }

    if (j.contains("simulation")) {
        const json& s = j["simulation"];
        rd.check_keys(s, "simulation", {"horizon", "runs", "seed", "noise", "x0"});
        auto positive_int = [&](const char* key, int& dst) {
            if (!s.contains(key))
                return;
            if (s[key].is_number_integer() && s[key].get<long long>() >= 1)
                dst = s[key].get<int>();
            else
                rd.error(std::string("simulation.") + key, "expected an integer >= 1");
        };
        positive_int("horizon", c.simulation.horizon);
        positive_int("runs", c.simulation.runs);
        if (s.contains("seed")) {
            if (s["seed"].is_number_unsigned())
                c.simulation.seed = s["seed"].get<std::uint64_t>();
            else
                rd.error("simulation.seed", "expected a nonnegative integer");
        }
        if (s.contains("noise")) {
            auto scheme = s["noise"].is_string() ? parse_noise_scheme(s["noise"].get<std::string>()) : std::nullopt;
            if (scheme)
                c.simulation.noise = *scheme;
            else
                rd.error("simulation.noise", "expected \"uniform\", \"extreme\" or \"zero\"");
        }
        if (s.contains("x0")) {
            const auto x = s["x0"].is_string() ? s["x0"].get<std::string>() : "";
            if (x == "midpoint")
                c.simulation.x0 = InitialState::Midpoint;
            else if (x == "uniform")
                c.simulation.x0 = InitialState::Uniform;
            else
                rd.error("simulation.x0", "expected \"midpoint\" or \"uniform\"");
        }
    }

    // Cross-field consistency, only once the pieces parsed.
    const int n = static_cast<int>(c.pre_decomposed ? c.A.rows() : c.f.size());
    if (expr_ok && n > 0) {
        if (c.pre_decomposed) {
            rd.check_vars(c.phi, n, "phi");
            rd.check_vars(c.psi, n, "psi");
        } else {
            rd.check_vars(c.f, n, "f");
            rd.check_vars(c.g, n, "g");
        }
    }
    const int l = static_cast<int>(c.pre_decomposed ? c.C.rows() : c.g.size());
    const int m = static_cast<int>(c.B.cols());
    // Shape checks run whenever the matrices themselves parsed, so one report
    // lists them next to unrelated errors. Raw models take n and l from f, g.
    if (mats_ok && (c.pre_decomposed || expr_ok)) {
        auto dims = [](const Mat& M) { return std::to_string(M.rows()) + "x" + std::to_string(M.cols()); };
        if (c.pre_decomposed) {
            if (c.A.rows() != c.A.cols())
                rd.error("matrices.A", "must be square, got " + dims(c.A));
            if (c.C.cols() != c.A.cols())
                rd.error("matrices.C", "must have n=" + std::to_string(n) + " columns, got " + dims(c.C));
            if (expr_ok && static_cast<int>(c.phi.size()) != n)
                rd.error("phi", "must have n=" + std::to_string(n) + " rows, got " + std::to_string(c.phi.size()));
            if (expr_ok && static_cast<int>(c.psi.size()) != l)
                rd.error("psi", "must have l=" + std::to_string(l) + " rows, got " + std::to_string(c.psi.size()));
        }
        if (c.B.rows() != n)
            rd.error("matrices.B", "must have n=" + std::to_string(n) + " rows, got " + dims(c.B));
        if (c.D.rows() != l || c.D.cols() != m)
            rd.error("matrices.D", "must be l x m = " + std::to_string(l) + "x" + std::to_string(m) + ", got " + dims(c.D));
        if (c.W.rows() != n)
            rd.error("matrices.W", "must have n=" + std::to_string(n) + " rows, got " + dims(c.W));
        if (c.V.rows() != l)
            rd.error("matrices.V", "must have l=" + std::to_string(l) + " rows, got " + dims(c.V));
        if (c.w_box.size() != c.W.cols())
            rd.error("noise.w", "length must equal the columns of W (" + std::to_string(c.W.cols()) + ")");
        if (c.v_box.size() != c.V.cols())
            rd.error("noise.v", "length must equal the columns of V (" + std::to_string(c.V.cols()) + ")");
        if (c.x0_box.size() != n)
            rd.error("x0", "length must equal n=" + std::to_string(n));
        if (c.domain && c.domain->size() != n)
            rd.error("domain", "length must equal n=" + std::to_string(n));
        if (c.L && (c.L->rows() != n || c.L->cols() != l))
            rd.error("observer.L", "must be n x l = " + std::to_string(n) + "x" + std::to_string(l) +
                                       " after orientation, got " + dims(*c.L) +
                                       (c.L_transposed ? " (transposed)" : ""));
        if (c.gains)
            for (const auto& p : c.gains->problems(n, m))
                rd.error("controller", p);
        if (expr_ok && rd.errors.empty()) {
            try {
                (void)c.model();
            } catch (const std::exception& e) {
                rd.error("model", e.what());
            }
        }
    }
    if (!rd.errors.empty()) {
        for (auto& e : rd.errors)
            e = source + ": " + e;
        throw ConfigError(rd.errors);
    }
    return c;
}

[[nodiscard]] inline ModelConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError({path + ": cannot open file"});
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

}  // namespace ivctl
