// ivctl: decompose, synthesize, simulate and verify interval-observer-based
// output-feedback controllers from a JSON model config.
//
// Exit codes: 0 ok, 1 usage or runtime error, 2 parse error, 3 infeasible,
// 4 certificate failure, 5 containment violation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <ivctl/artifacts.hpp>
#include <ivctl/config.hpp>
#include <ivctl/controller.hpp>
#include <ivctl/observer.hpp>
#include <ivctl/synthesis.hpp>

namespace fs = std::filesystem;
using namespace ivctl;

namespace {

enum Exit { kOk = 0, kUsage = 1, kParse = 2, kInfeasible = 3, kCertificate = 4, kContainment = 5 };

struct Args {
    std::string model;
    std::string out;
    std::optional<int> horizon;
    std::optional<int> runs;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
    std::string mode = "closed";
    std::string gains;
    std::string noise;
    std::string csv;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void print_matrix(const std::string& name, const Mat& M) {
    std::cout << name << " (" << M.rows() << "x" << M.cols() << ")\n";
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        std::cout << "  ";
        for (Eigen::Index j = 0; j < M.cols(); ++j) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%11.4g", M(i, j));
            std::cout << buf;
        }
        std::cout << "\n";
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

sdp::Solver solver_from_env() {
    const char* name = std::getenv("IVCTL_SDP_SOLVER");
    return sdp::solver_by_name(name ? name : "");
}

json to_json(const LmiResiduals& r) {
    return {{"decay_max_eig", r.decay_max_eig},
            {"attenuation_max_eig", r.attenuation_max_eig},
            {"coupling_min_eig", r.coupling_min_eig},
            {"schur_min_eig", r.schur_min_eig}};
}

json to_json(const CertificateReport& r) {
    return {{"decay_max_eig", r.decay_max_eig},
            {"attenuation_max_eig", r.attenuation_max_eig},
            {"A_tilde_radius", r.A_tilde_radius},
            {"certified", r.certified}};
}

// Observer gain from the gains file, else the config, else a search.
struct ResolvedObserver {
    ObserverGain gain;
    std::string source;
};

ResolvedObserver resolve_observer(const ModelConfig& cfg, const SystemModel& model, const Decompositions& dec) {
    if (auto L = cfg.observer())
        return {*L, "config"};
    auto r = search_observer_gain(model, dec.F_phi, dec.F_psi, cfg.synthesis.observer_search_budget);
    return {r.gain, "search"};
}

// ----------------------------------------------------------------------------

int cmd_decompose(const Args& a) {
    const auto cfg = parse_config(a.model);
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const double alpha = a.alpha.value_or(cfg.synthesis.alpha);
    std::cout << "model " << cfg.name << "  n=" << model.n() << " m=" << model.m() << " l=" << model.l() << "\n";
    print_matrix("H_f = A", model.A);
    print_matrix("H_g = C", model.C);
    print_matrix("J_phi lower", model.phi.jac_lo);
    print_matrix("J_phi upper", model.phi.jac_hi);
    print_matrix("J_psi lower", model.psi.jac_lo);
    print_matrix("J_psi upper", model.psi.jac_hi);
    print_matrix("F_phi", dec.F_phi);
    print_matrix("F_psi", dec.F_psi);
    const double eps = epsilon_of(alpha, dec.gamma());
    std::cout << "gamma = |F_phi|_inf = " << fmt(dec.gamma()) << "\n"
              << "epsilon = 1/(alpha gamma^2) - 1 = " << fmt(eps) << "  (alpha=" << fmt(alpha) << ")\n"
              << "spectral radius of A = " << fmt(spectral_radius(model.A)) << "\n";
    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_json(fs::path(a.out) / "decompose.json",
                   {{"model", cfg.name},
                    {"A", ivctl::to_json(model.A)},
                    {"C", ivctl::to_json(model.C)},
                    {"J_phi_lo", ivctl::to_json(model.phi.jac_lo)},
                    {"J_phi_hi", ivctl::to_json(model.phi.jac_hi)},
                    {"J_psi_lo", ivctl::to_json(model.psi.jac_lo)},
                    {"J_psi_hi", ivctl::to_json(model.psi.jac_hi)},
                    {"F_phi", ivctl::to_json(dec.F_phi)},
                    {"F_psi", ivctl::to_json(dec.F_psi)},
                    {"gamma", dec.gamma()},
                    {"alpha", alpha},
                    {"epsilon", eps}});
    }
    return kOk;
}

int cmd_synthesize(const Args& a) {
    const auto cfg = parse_config(a.model);
    const auto solver = solver_from_env();
    fs::create_directories(a.out);
    json report = {{"model", cfg.name}};

    std::cout << "[decompose] ";
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const double alpha = a.alpha.value_or(cfg.synthesis.alpha);
    report["gamma"] = dec.gamma();
    report["alpha"] = alpha;
    report["epsilon"] = epsilon_of(alpha, dec.gamma());
    report["rho_A"] = spectral_radius(model.A);
    std::cout << "gamma=" << fmt(dec.gamma()) << " epsilon=" << fmt(epsilon_of(alpha, dec.gamma())) << "\n";

    std::cout << "[observer] ";
    const auto obs = resolve_observer(cfg, model, dec);
    const auto orep = verify_observer_gain(model, dec.F_phi, dec.F_psi, obs.gain);
    report["observer"] = {{"source", obs.source},
                          {"L", ivctl::to_json(obs.gain.L)},
                          {"rho_M_L", orep.radius_ML},
                          {"rho_A_u", orep.radius_Au},
                          {"iss", orep.iss}};
    std::cout << "L from " << obs.source << ", rho(M_L)=" << fmt(orep.radius_ML)
              << (orep.iss ? " (ISS)" : " (not ISS)") << "\n";

    std::cout << "[sdp] ";
    SynthesisResult syn;
    try {
        syn = synthesize(model, dec, obs.gain, alpha, solver);
    } catch (const std::invalid_argument& e) {
        report["stage"] = "assembly";
        report["error"] = e.what();
        write_json(fs::path(a.out) / "synthesis.json", report);
        std::cout << "rejected at assembly: " << e.what() << "\n";
        return kInfeasible;
    }
    report["block_dims"] = syn.block_dims;
    json stages = json::array();
    for (const auto& s : syn.stages) {
        stages.push_back({{"mode", to_string(s.mode)},
                          {"status", sdp::to_string(s.status)},
                          {"message", s.message},
                          {"iterations", s.iterations},
                          {"mu_star", std::isfinite(s.mu_star) ? json(s.mu_star) : json(nullptr)},
                          {"residuals", to_json(s.residuals)},
                          {"residuals_ok", s.residuals_ok()}});
        std::cout << to_string(s.mode) << ": " << sdp::to_string(s.status) << " after " << s.iterations
                  << " iterations (" << s.message << ")";
        if (s.feasible())
            std::cout << " mu*=" << fmt(s.mu_star);
        std::cout << "\n      ";
    }
    std::cout << "\n";
    report["stages"] = stages;
    const auto& last = syn.final_stage();
    if (!last.feasible() || !last.residuals_ok()) {
        report["stage"] = "sdp";
        write_json(fs::path(a.out) / "synthesis.json", report);
        std::cout << "synthesis infeasible: " << last.message << "\n";
        return kInfeasible;
    }

    std::cout << "[recover] ";
    const auto& rec = *syn.recovered;
    report["replica_deviation"] = rec.replica_deviation;
    report["mu_star"] = last.mu_star;
    std::cout << "replica deviation " << fmt(rec.replica_deviation) << "\n";

    std::cout << "[certify] ";
    const Mat P = last.vars.Q.inverse();
    auto cert = verify_certified_gains(model, dec, obs.gain, rec.gains, P, last.mu_star, alpha, syn.epsilon);
    GainsFile gf{obs.gain.L, rec.gains, last.vars.Q, last.mu_star, std::nullopt, std::nullopt, alpha, syn.epsilon,
                 syn.gamma, to_string(last.mode), rec.replica_deviation};
    json cj = to_json(cert);
    cj["source"] = "P = Q^-1";
    if (cert.certified) {
        gf.P = P;
        gf.mu_certified = last.mu_star;
    } else {
        // Gamma only relaxes Q^2, so P = Q^-1 need not satisfy the certificate
        // LMIs; for the fixed recovered gains they are convex in (P, mu).
        const auto found = find_certificate(model, dec, obs.gain, rec.gains, alpha, syn.epsilon, solver);
        cj = to_json(found.report);
        cj["source"] = "search for fixed gains";
        cj["status"] = sdp::to_string(found.status);
        cj["q_inverse"] = to_json(cert);
        cert = found.report;
        if (found.found()) {
            gf.P = found.P;
            gf.mu_certified = found.mu;
            cj["mu"] = found.mu;
        }
    }
    report["certificate"] = cj;
    std::cout << (cert.certified ? "certified" : "NOT certified") << " (" << cj["source"].get<std::string>()
              << "), rho(A~)=" << fmt(cert.A_tilde_radius);
    if (gf.mu_certified)
        std::cout << ", certified mu=" << fmt(*gf.mu_certified);
    std::cout << "\n";

    write_gains_file((fs::path(a.out) / "gains.json").string(), gf);
    report["stage"] = cert.certified && rec.structured() ? "done" : "certify";
    write_json(fs::path(a.out) / "synthesis.json", report);
    std::cout << "wrote " << (fs::path(a.out) / "gains.json").string() << "\n";
    return cert.certified && rec.structured() ? kOk : kCertificate;
}

struct LoadedGains {
    ObserverGain L;
    std::optional<ControllerGains> gains;
    std::optional<GainsFile> file;
};

LoadedGains load_gains(const Args& a, const ModelConfig& cfg, const SystemModel& model) {
    LoadedGains out;
    if (!a.gains.empty()) {
        auto gf = parse_gains_file(a.gains, model.n(), model.m(), model.l());
        out.L = ObserverGain{gf.L};
        out.gains = gf.gains;
        out.file = std::move(gf);
        return out;
    }
    out.L = cfg.observer().value_or(ObserverGain{Mat::Zero(model.n(), model.l())});
    out.gains = cfg.gains;
    return out;
}

int cmd_simulate(const Args& a) {
    const auto cfg = parse_config(a.model);
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const auto lg = load_gains(a, cfg, model);
    const bool closed = a.mode == "closed";
    if (closed && !lg.gains)
        throw CLI::ValidationError("--mode closed needs controller gains (--gains or a config 'controller' block)");
    const int horizon = a.horizon.value_or(cfg.simulation.horizon);
    const int runs = a.runs.value_or(cfg.simulation.runs);
    const std::uint64_t seed = a.seed.value_or(cfg.simulation.seed);
    SimOptions opt;
    opt.noise = cfg.simulation.noise;
    if (!a.noise.empty())
        opt.noise = *parse_noise_scheme(a.noise);
    opt.x0_mode = cfg.simulation.x0;

    std::vector<RunRecord> records;
    records.reserve(static_cast<std::size_t>(runs));
    for (int r = 0; r < runs; ++r) {
        const auto t = simulate_closed_loop(model, dec, lg.L, closed ? lg.gains : std::nullopt, horizon,
                                            derive_seed(seed, static_cast<std::uint64_t>(r)), opt);
        records.push_back(to_record(t));
    }
    fs::create_directories(a.out);
    const auto csv = fs::path(a.out) / "trajectories.csv";
    write_trajectories_csv(csv.string(), records, model.n(), model.m(), model.l());
    const auto s = summarize(records, horizon);

    json j = {{"model", cfg.name},
              {"mode", a.mode},
              {"seed", seed},
              {"noise", to_string(opt.noise)},
              {"gamma", dec.gamma()},
              {"rho_A", spectral_radius(model.A)},
              {"rho_M_L", verify_observer_gain(model, dec.F_phi, dec.F_psi, lg.L).radius_ML},
              {"diverged", s.truncated_runs > 0 || s.max_state_norm > 1e6},
              {"widths_settled", widths_settled(s.sup_width_by_step)},
              {"summary", to_json(s)}};
    if (lg.file && lg.file->mu_star)
        j["mu_star"] = *lg.file->mu_star;
    write_json(fs::path(a.out) / "summary.json", j);

    std::cout << a.mode << "-loop, " << runs << " runs x " << horizon << " steps: containment "
              << s.contained_runs << "/" << s.runs << ", mean width " << fmt(s.mean_width) << ", max |x| "
              << fmt(s.max_state_norm) << (s.truncated_runs ? ", " + std::to_string(s.truncated_runs) + " truncated" : "")
              << "\nwrote " << csv.string() << "\n";
    return s.contained_runs == s.runs ? kOk : kContainment;
}

int cmd_verify(const Args& a) {
    const auto cfg = parse_config(a.model);
    const auto model = cfg.model();
    const auto dec = cfg.decompositions();
    const auto lg = load_gains(a, cfg, model);
    if (!lg.gains)
        throw CLI::ValidationError("verify needs controller gains (--gains or a config 'controller' block)");
    const double alpha = lg.file ? lg.file->alpha : a.alpha.value_or(cfg.synthesis.alpha);
    const double eps = epsilon_of(alpha, dec.gamma());

    json checks = json::array();
    bool cert_ok = true, contain_ok = true;
    auto add = [&](const std::string& name, bool pass, json details, bool* group) {
        checks.push_back({{"name", name}, {"pass", pass}, {"details", std::move(details)}});
        std::cout << (pass ? "PASS " : "FAIL ") << name << "\n";
        if (group)
            *group = *group && pass;
    };

    const auto orep = verify_observer_gain(model, dec.F_phi, dec.F_psi, lg.L);
    add("observer_iss", orep.iss, {{"rho_M_L", orep.radius_ML}, {"rho_A_u", orep.radius_Au}}, &cert_ok);

    const auto cs = build_comparison(model, dec, lg.L, *lg.gains);
    const Mat diff = cs.A_tilde - (cs.A_hat + cs.B_hat * block_diag_repeat(pack_gains(*lg.gains, dec.F_phi), 5));
    const double tol = 1e-12 * (1.0 + cs.A_tilde.cwiseAbs().maxCoeff());
    add("comparison_identity", diff.cwiseAbs().maxCoeff() <= tol, {{"max_abs_diff", diff.cwiseAbs().maxCoeff()}},
        nullptr);

    std::optional<Mat> P;
    std::optional<double> mu;
    std::string source;
    if (lg.file && lg.file->P && lg.file->mu_certified) {
        P = lg.file->P;
        mu = lg.file->mu_certified;
        source = "P from gains file";
    } else if (lg.file && lg.file->Q && lg.file->mu_star) {
        Eigen::FullPivLU<Mat> lu(*lg.file->Q);
        if (lu.isInvertible())
            P = lu.inverse();
        mu = lg.file->mu_star;
        source = "P = Q^-1 from gains file";
    }
    if (!source.empty()) {
        json d = {{"source", source}};
        bool ok = P.has_value();
        if (ok) {
            const auto r = verify_certified_gains(model, dec, lg.L, *lg.gains, *P, *mu, alpha,
                                                  lg.file->epsilon > 0.0 ? lg.file->epsilon : eps);
            d.update(to_json(r));
            ok = r.certified;
        } else {
            d["error"] = "Q is singular";
        }
        add("certificate", ok, d, &cert_ok);
    } else {
        const auto r = find_certificate(model, dec, lg.L, *lg.gains, alpha, eps, solver_from_env());
        json d = {{"source", "certificate search"}, {"status", sdp::to_string(r.status)}, {"message", r.message}};
        d.update(to_json(r.report));
        if (std::isfinite(r.mu))
            d["mu"] = r.mu;
        add("certificate", r.found(), d, &cert_ok);
    }
    const double rho = spectral_radius(cs.A_tilde);
    add("A_tilde_schur", rho < 1.0, {{"rho_A_tilde", rho}}, &cert_ok);

    const int horizon = a.horizon.value_or(cfg.simulation.horizon);
    const int runs = a.runs.value_or(cfg.simulation.runs);
    const std::uint64_t seed = a.seed.value_or(cfg.simulation.seed);
    SimOptions opt;
    opt.noise = cfg.simulation.noise;
    opt.x0_mode = cfg.simulation.x0;
    std::vector<RunRecord> records;
    for (int r = 0; r < runs; ++r)
        records.push_back(to_record(simulate_closed_loop(model, dec, lg.L, lg.gains, horizon,
                                                         derive_seed(seed, static_cast<std::uint64_t>(r)), opt)));
    const auto s = summarize(records, horizon);
    add("containment", s.contained_runs == s.runs && s.min_width >= 0.0,
        {{"contained_runs", s.contained_runs}, {"runs", s.runs}, {"min_width", s.min_width}}, &contain_ok);
    add("bounded_widths", widths_settled(s.sup_width_by_step) && s.truncated_runs == 0,
        {{"max_width", s.max_width}, {"truncated_runs", s.truncated_runs}}, nullptr);

    if (!a.out.empty()) {
        fs::create_directories(a.out);
        write_json(fs::path(a.out) / "verify.json",
                   {{"model", cfg.name}, {"alpha", alpha}, {"epsilon", eps}, {"checks", checks}});
    }
    if (!cert_ok)
        return kCertificate;
    return contain_ok ? kOk : kContainment;
}

int cmd_summarize(const Args& a) {
    const auto runs = read_trajectories_csv(a.csv);
    int horizon = a.horizon.value_or(0);
    if (!a.horizon)
        for (const auto& r : runs)
            horizon = std::max(horizon, r.steps());
    std::cout << to_json(summarize(runs, horizon)).dump(2) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interval-observer-based output-feedback synthesis and simulation"};
    app.require_subcommand(1);
    Args a;

    auto add_model = [&](CLI::App* c) { c->add_option("--model", a.model, "Model config (JSON)")->required()->check(CLI::ExistingFile); };
    auto add_out = [&](CLI::App* c) { c->add_option("--out", a.out, "Output directory (default: out)"); };
    auto add_sim = [&](CLI::App* c) {
        c->add_option("--horizon", a.horizon, "Steps per run")->check(CLI::Range(1, 1000000));
        c->add_option("--runs", a.runs, "Number of runs")->check(CLI::Range(1, 1000000));
        c->add_option("--seed", a.seed, "Base seed");
    };

    auto* dec = app.add_subcommand("decompose", "Print remainders, Jacobian bounds and bounding matrices");
    add_model(dec);
    dec->add_option("--out", a.out, "Also write decompose.json here");
    dec->add_option("--alpha", a.alpha, "Decay parameter used for epsilon")->check(CLI::PositiveNumber);

    auto* syn = app.add_subcommand("synthesize", "Solve the gain synthesis SDP and certify the result");
    add_model(syn);
    add_out(syn);
    syn->add_option("--alpha", a.alpha, "Decay parameter")->check(CLI::PositiveNumber);

    auto* sim = app.add_subcommand("simulate", "Monte-Carlo runs of the plant with its framer");
    add_model(sim);
    add_out(sim);
    add_sim(sim);
    sim->add_option("--mode", a.mode, "open or closed")->check(CLI::IsMember({"open", "closed"}))->capture_default_str();
    sim->add_option("--gains", a.gains, "Gains file written by synthesize")->check(CLI::ExistingFile);
    sim->add_option("--noise", a.noise, "uniform, extreme or zero")->check(CLI::IsMember({"uniform", "extreme", "zero"}));

    auto* ver = app.add_subcommand("verify", "Check observer, certificate and containment for given gains");
    add_model(ver);
    add_sim(ver);
    ver->add_option("--out", a.out, "Also write verify.json here");
    ver->add_option("--gains", a.gains, "Gains file; defaults to the config's controller block")->check(CLI::ExistingFile);
    ver->add_option("--alpha", a.alpha, "Decay parameter when the gains file has none")->check(CLI::PositiveNumber);

    auto* sum = app.add_subcommand("summarize", "Recompute summary metrics from a trajectories CSV");
    sum->add_option("--csv", a.csv, "trajectories.csv")->required()->check(CLI::ExistingFile);
    sum->add_option("--horizon", a.horizon, "Horizon the runs were simulated with")->check(CLI::Range(1, 1000000));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    if (a.out.empty() && (*syn || *sim))
        a.out = "out";
    try {
        if (*dec) return cmd_decompose(a);
        if (*syn) return cmd_synthesize(a);
        if (*sim) return cmd_simulate(a);
        if (*ver) return cmd_verify(a);
        if (*sum) return cmd_summarize(a);
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return kParse;
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
