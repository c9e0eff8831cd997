// Command-line harness: geometry diagnostics, forward transport solves,
// operator-distance measurement, gauge invariance checks, and the stability
// sweep. Reads an INI-style run config, writes JSON reports and CSV tables.

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <geotransport/config.hpp>

using nlohmann::json;
using namespace geotransport;

namespace {

constexpr int kSchemaVersion = 1;

struct CliArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    double grid_scale = 1.0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write " + path.string());
    out << text;
}

json base_report(const RunConfig& cfg, const CliArgs& args, const std::string& subcommand) {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["subcommand"] = subcommand;
    j["seed"] = args.seed;
    j["grid_scale"] = args.grid_scale;
    j["config"] = print_config(cfg);
    return j;
}

void scale_grids(RunConfig& cfg, double s) {
    if (s == 1.0) return;
    auto sc = [s](int v, int lo) { return std::max(lo, int(std::lround(v * s))); };
    cfg.grids.boundary_points = sc(cfg.grids.boundary_points, 4);
    cfg.grids.directions = sc(cfg.grids.directions, 4);
    cfg.grids.phase_points = sc(cfg.grids.phase_points, 5) | 1;  // keep odd
    if (cfg.grids.boundary_points_2 > 1)
        cfg.grids.boundary_points_2 = sc(cfg.grids.boundary_points_2, 2);
    if (cfg.grids.directions_2 > 1) cfg.grids.directions_2 = sc(cfg.grids.directions_2, 2);
}

SolverOptions solver_options(const RunConfig& cfg) {
    SolverOptions s;
    s.line_step = cfg.grids.path_step;
    s.max_terms = cfg.experiment.max_terms;
    s.tol = cfg.experiment.solver_tol;
    return s;
}

OpNormOptions opnorm_options(const RunConfig& cfg) {
    OpNormOptions o;
    o.probe_positions = cfg.experiment.probe_positions;
    o.probe_directions = cfg.experiment.probe_directions;
    o.beam_cells = cfg.experiment.beam_cells;
    return o;
}

// the measured pair: coefficients_tilde when present, else a gauge transform
// of the baseline, else the baseline itself
CoefficientPair second_pair(const RunConfig& cfg, const Manifold& man,
                            const CoefficientPair& base, json& info) {
    if (cfg.has_tilde) {
        info["second_pair"] = "coefficients_tilde";
        return build_coefficients(cfg.coefficients_tilde, cfg.geometry.dim);
    }
    if (cfg.gauge.kind == "polynomial") {
        FieldExpr h = parse_field_expr(cfg.gauge.h_expr, FieldRole::Metric, cfg.geometry.dim);
        Gauge g = make_polynomial_gauge(
            man, [h](const Vec& x, const Vec&) { return h.eval(x); }, cfg.gauge.fd_delta);
        info["second_pair"] = "polynomial gauge transform";
        info["gauge_log_sup"] = g.log_sup;
        info["gauge_boundary_defect"] = gauge_boundary_defect(man, g);
        return apply_gauge(man, base, g);
    }
    info["second_pair"] = "baseline (self comparison)";
    return base;
}

int cmd_geometry_diag(const RunConfig& cfg, const CliArgs& args) {
    Manifold man = build_manifold(cfg.geometry);
    json j = base_report(cfg, args, "geometry-diag");
    Manifold::SimplicityReport sr = man.simplicity_diagnostics();
    DiamC0Estimate dc = man.estimate_diam_and_c0();
    double r_mid = 0.5 * (cfg.geometry.r_m + cfg.geometry.r_m0);
    MeasureInvarianceReport mi = measure_invariance_check(man, r_mid);
    j["simplicity"] = {{"non_trapping", sr.non_trapping},
                       {"convex_boundary", sr.convex_boundary},
                       {"no_conjugate_points", sr.no_conjugate_points},
                       {"curvature_bound_2d", sr.curvature_bound_2d},
                       {"max_curvature", sr.max_curvature},
                       {"ok", sr.ok()}};
    j["diam"] = dc.diam;
    j["c0"] = dc.c0;
    j["boundary_volume"] = boundary_volume(man);
    j["measure_invariance"] = {{"max_defect", mi.max_defect},
                               {"mean_defect", mi.mean_defect},
                               {"samples", mi.samples}};
    write_text(std::filesystem::path(args.out_dir) / cfg.output.report, j.dump(2) + "\n");
    std::printf("simplicity: %s  diam=%.6f  c0=%.6f  measure defect=%.3e\n",
                sr.ok() ? "ok" : "FAILED", dc.diam, dc.c0, mi.max_defect);
    return sr.ok() ? 0 : 1;
}

int cmd_forward(const RunConfig& cfg, const CliArgs& args) {
    Manifold man = build_manifold(cfg.geometry);
    CoefficientPair cp = build_coefficients(cfg.coefficients, cfg.geometry.dim);
    PhaseGrid grid = build_phase_grid(cfg);
    CriticalityReport crit = check_subcritical(man, cp, grid.dirs);
    json j = base_report(cfg, args, "forward");
    j["criticality"] = {{"cs_value", crit.cs_value},
                        {"cs_ok", crit.cs_ok},
                        {"dl_margin", crit.dl_margin}};
    if (!crit.cs_ok) {
        write_text(std::filesystem::path(args.out_dir) / cfg.output.report, j.dump(2) + "\n");
        std::fprintf(stderr, "coefficients are not subcritical (cs=%.4f)\n", crit.cs_value);
        return 1;
    }
    TransportWorkspace ws(man, cp, grid, solver_options(cfg));
    BoundarySource inflow = [](const Vec&, const Vec&) { return 1.0; };
    SolveStats st;
    Field u = ws.solve(inflow, &st);
    j["solve"] = {{"terms", st.terms},
                  {"residual", st.residual},
                  {"tail_bound", st.tail_bound},
                  {"max_abs", st.max_abs},
                  {"contraction_ratios", st.ratios}};
    write_text(std::filesystem::path(args.out_dir) / cfg.output.report, j.dump(2) + "\n");
    if (!cfg.output.field_dump.empty()) {
        std::ostringstream csv;
        csv << "x1,x2";
        if (cfg.geometry.dim == 3) csv << ",x3";
        csv << ",v1,v2";
        if (cfg.geometry.dim == 3) csv << ",v3";
        csv << ",value\n";
        char buf[64];
        for (std::size_t ix = 0; ix < grid.nx(); ++ix) {
            Vec x = grid.node(ix);
            for (std::size_t id = 0; id < grid.dirs.size(); ++id) {
                Vec v = man.metric().fiber_dir(x, grid.dirs.u[id]);
                for (int d = 0; d < cfg.geometry.dim; ++d) {
                    std::snprintf(buf, sizeof buf, "%.12e,", x[d]);
                    csv << buf;
                }
                for (int d = 0; d < cfg.geometry.dim; ++d) {
                    std::snprintf(buf, sizeof buf, "%.12e,", v[d]);
                    csv << buf;
                }
                std::snprintf(buf, sizeof buf, "%.12e\n", u[ix * grid.dirs.size() + id]);
                csv << buf;
            }
        }
        write_text(std::filesystem::path(args.out_dir) / cfg.output.field_dump, csv.str());
    }
    std::printf("solve: %d terms  residual=%.3e  tail=%.3e\n", st.terms, st.residual,
                st.tail_bound);
    return st.residual <= 1e-4 ? 0 : 1;
}

int cmd_albedo_norm(const RunConfig& cfg, const CliArgs& args) {
    Manifold man = build_manifold(cfg.geometry);
    CoefficientPair cpa = build_coefficients(cfg.coefficients, cfg.geometry.dim);
    json j = base_report(cfg, args, "albedo-norm");
    CoefficientPair cpb = second_pair(cfg, man, cpa, j);
    PhaseGrid grid = build_phase_grid(cfg);
    GammaGridSpec spec = build_gamma_spec(cfg);
    GammaGrid gm(man, man.r_outer(), -1, spec), gp(man, man.r_outer(), +1, spec);
    TransportWorkspace wsa(man, cpa, grid, solver_options(cfg));
    TransportWorkspace wsb(man, cpb, grid, solver_options(cfg));
    double value;
    if (cfg.experiment.mode == "n2") {
        StarNormReport r = star_norm_diff_2d(wsa, wsb, gm, gp, cfg.experiment.probe_positions,
                                             cfg.experiment.beam_cells);
        j["star_norm"] = {{"value", r.value},
                          {"ballistic_sup", r.ballistic_sup},
                          {"beta_sup", r.beta_sup},
                          {"pairs", r.pairs}};
        value = r.value;
    } else {
        OpNormReport r = opnorm_L1(wsa, wsb, gm, gp, opnorm_options(cfg));
        j["opnorm"] = {{"value", r.value},
                       {"ballistic_sup", r.ballistic_sup},
                       {"max_column", r.max_column},
                       {"probes", r.probes}};
        value = r.value;
    }
    write_text(std::filesystem::path(args.out_dir) / cfg.output.report, j.dump(2) + "\n");
    std::printf("operator distance (%s): %.6e\n", cfg.experiment.mode.c_str(), value);
    return 0;
}

int cmd_gauge_check(const RunConfig& cfg, const CliArgs& args) {
    if (cfg.gauge.kind == "none") throw config_error("gauge-check needs a [gauge] section");
    Manifold man = build_manifold(cfg.geometry);
    CoefficientPair cpa = build_coefficients(cfg.coefficients, cfg.geometry.dim);
    json j = base_report(cfg, args, "gauge-check");
    CoefficientPair cpb;
    if (cfg.gauge.kind == "polynomial") {
        FieldExpr h = parse_field_expr(cfg.gauge.h_expr, FieldRole::Metric, cfg.geometry.dim);
        Gauge g = make_polynomial_gauge(
            man, [h](const Vec& x, const Vec&) { return h.eval(x); }, cfg.gauge.fd_delta);
        j["second_pair"] = "polynomial gauge transform";
        j["gauge_log_sup"] = g.log_sup;
        j["gauge_boundary_defect"] = gauge_boundary_defect(man, g);
        cpb = apply_gauge(man, cpa, g);
    } else {  // trial gauge between the two configured coefficient sets
        if (!cfg.has_tilde)
            throw config_error("gauge-check kind=trial needs [coefficients_tilde]");
        CoefficientPair cpt = build_coefficients(cfg.coefficients_tilde, cfg.geometry.dim);
        Gauge g = trial_gauge(man, cpa.a, cpt.a);
        j["second_pair"] = "trial gauge transform of coefficients";
        j["gauge_log_sup"] = g.log_sup;
        cpb = apply_gauge(man, cpa, g, false);
    }
    PhaseGrid grid = build_phase_grid(cfg);
    GammaGridSpec spec = build_gamma_spec(cfg);
    GammaGrid gm(man, man.r_outer(), -1, spec), gp(man, man.r_outer(), +1, spec);
    TransportWorkspace wsa(man, cpa, grid, solver_options(cfg));
    TransportWorkspace wsb(man, cpb, grid, solver_options(cfg));
    OpNormReport r = opnorm_L1(wsa, wsb, gm, gp, opnorm_options(cfg));
    double tol = cfg.experiment.tol > 0.0 ? cfg.experiment.tol : 5e-3;
    j["opnorm"] = {{"value", r.value},
                   {"ballistic_sup", r.ballistic_sup},
                   {"max_column", r.max_column},
                   {"probes", r.probes}};
    j["tolerance"] = tol;
    j["pass"] = r.value <= tol;
    write_text(std::filesystem::path(args.out_dir) / cfg.output.report, j.dump(2) + "\n");
    std::printf("gauge invariance: opnorm=%.6e  tol=%.1e  %s\n", r.value, tol,
                r.value <= tol ? "pass" : "FAIL");
    return r.value <= tol ? 0 : 1;
}

int cmd_stability(const RunConfig& cfg, const CliArgs& args) {
    Manifold man = build_manifold(cfg.geometry);
    CoefficientPair base = build_coefficients(cfg.coefficients, cfg.geometry.dim);
    if (!cfg.has_tilde)
        throw config_error("stability needs [coefficients_tilde] as the perturbation direction");
    CoefficientPair dir = build_coefficients(cfg.coefficients_tilde, cfg.geometry.dim);

    StabilitySetup setup;
    setup.man = &man;
    setup.baseline = base;
    // the perturbed pair interpolates between baseline and the tilde set
    setup.perturbed = [&](double d) {
        CoefficientPair p;
        p.support_radius = std::max(base.support_radius, dir.support_radius);
        AttenuationCoeff a0 = base.a, a1 = dir.a;
        p.a.f = [a0, a1, d](const Vec& x, const Vec& v) {
            return (1.0 - d) * a0(x, v) + d * a1(x, v);
        };
        for (const SeparableTerm& t : base.k.terms) {
            SeparableTerm s = t;
            auto A = t.A;
            s.A = [A, d](const Vec& x, const Vec& v) { return (1.0 - d) * A(x, v); };
            p.k.terms.push_back(std::move(s));
        }
        for (const SeparableTerm& t : dir.k.terms) {
            SeparableTerm s = t;
            auto A = t.A;
            s.A = [A, d](const Vec& x, const Vec& v) { return d * A(x, v); };
            p.k.terms.push_back(std::move(s));
        }
        if (base.k.f || dir.k.f) {
            ScatterFn k0 = base.k.f, k1 = dir.k.f;
            p.k.f = [k0, k1, d](const Vec& x, const Vec& v, const Vec& vp) {
                double v0 = k0 ? k0(x, v, vp) : 0.0;
                double v1 = k1 ? k1(x, v, vp) : 0.0;
                return (1.0 - d) * v0 + d * v1;
            };
            p.k.terms.clear();
        }
        return p;
    };
    setup.mode = cfg.experiment.mode;
    setup.deltas = cfg.experiment.deltas;
    setup.phase_grid = build_phase_grid(cfg);
    setup.gamma_spec = build_gamma_spec(cfg);
    setup.solver = solver_options(cfg);
    setup.opnorm = opnorm_options(cfg);
    setup.chain_sample_count = cfg.experiment.chain_samples;
    setup.tol = cfg.experiment.tol > 0.0 ? cfg.experiment.tol : 1e-3;

    StabilityReport rep = run_stability_experiment(setup);

    std::ostringstream csv;
    csv << "delta,epsilon,delta_upper,C,C_eps,verdict\n";
    char buf[256];
    for (const StabilityRow& row : rep.rows) {
        std::snprintf(buf, sizeof buf, "%.12e,%.12e,%.12e,%.12e,%.12e,%s\n", row.delta, row.eps,
                      row.delta_upper, row.C, row.C_eps, row.verdict ? "true" : "false");
        csv << buf;
    }
    write_text(std::filesystem::path(args.out_dir) / cfg.output.csv, csv.str());

    json j = base_report(cfg, args, "stability");
    j["constants"] = {{"sigma", rep.constants.sigma},
                      {"rho", rep.constants.rho},
                      {"diam", rep.constants.diam},
                      {"c0", rep.constants.c0},
                      {"vol_boundary", rep.constants.vol_boundary},
                      {"omega", rep.constants.omega},
                      {"n", rep.constants.n}};
    j["c_emp"] = rep.c_emp;
    j["all_verdicts"] = rep.all_verdicts;
    j["rows"] = json::array();
    for (const StabilityRow& row : rep.rows) {
        json r = {{"delta", row.delta},
                  {"epsilon", row.eps},
                  {"delta_upper", row.delta_upper},
                  {"C1", row.C1},
                  {"C", row.C},
                  {"C_eps", row.C_eps},
                  {"verdict", row.verdict},
                  {"a_component", row.a_component},
                  {"k_component", row.k_component},
                  {"a_ok", row.a_ok},
                  {"k_ok", row.k_ok},
                  {"cs_margin", row.cs_margin},
                  {"runtime_sec", row.runtime_sec},
                  {"chain",
                   {{"estimate1_violation", row.chain.estimate1_violation},
                    {"less_epsilon_violation", row.chain.less_epsilon_violation},
                    {"final_a_violation", row.chain.final_a_violation},
                    {"lower_E_violation", row.chain.lower_E_violation},
                    {"FF_violation", row.chain.FF_violation},
                    {"rho_violation", row.chain.rho_violation},
                    {"samples", row.chain.samples}}}};
        if (!row.error.empty()) r["error"] = row.error;
        j["rows"].push_back(std::move(r));
    }
    write_text(std::filesystem::path(args.out_dir) / cfg.output.report, j.dump(2) + "\n");
    for (const StabilityRow& row : rep.rows)
        std::printf("delta=%.4f  eps=%.4e  Delta_upper=%.4e  C*eps=%.4e  %s\n", row.delta,
                    row.eps, row.delta_upper, row.C_eps,
                    row.error.empty() ? (row.verdict ? "pass" : "FAIL") : row.error.c_str());
    std::printf("c_emp=%.4f  all verdicts: %s\n", rep.c_emp, rep.all_verdicts ? "pass" : "FAIL");
    return rep.all_verdicts ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"geodesic transport stability harness"};
    app.require_subcommand(1);
    CliArgs args;
    std::string sub;
    for (const char* name : {"geometry-diag", "forward", "albedo-norm", "gauge-check",
                             "stability"}) {
        CLI::App* s = app.add_subcommand(name);
        s->add_option("--config", args.config_path)->required();
        s->add_option("--out", args.out_dir);
        s->add_option("--seed", args.seed);
        s->add_option("--grid-scale", args.grid_scale)->check(CLI::PositiveNumber);
        s->callback([&sub, name] { sub = name; });
    }
    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = parse_config_or_throw(read_file(args.config_path));
        scale_grids(cfg, args.grid_scale);
        std::filesystem::create_directories(args.out_dir);
        if (sub == "geometry-diag") return cmd_geometry_diag(cfg, args);
        if (sub == "forward") return cmd_forward(cfg, args);
        if (sub == "albedo-norm") return cmd_albedo_norm(cfg, args);
        if (sub == "gauge-check") return cmd_gauge_check(cfg, args);
        if (sub == "stability") return cmd_stability(cfg, args);
        std::fprintf(stderr, "unknown subcommand\n");
        return 2;
    } catch (const std::exception& e) {
        json err = {{"schema_version", kSchemaVersion}, {"error", e.what()}, {"subcommand", sub}};
        std::ofstream out(std::filesystem::path(args.out_dir) / "error.json");
        if (out) out << err.dump(2) << "\n";
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 2;
    }
}
