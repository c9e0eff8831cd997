// End-to-end acceptance harness: one pass/fail line per criterion, exit code
// equal to the number of failures. All tolerances are pinned inline.
#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <tuple>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <geotransport/config.hpp>
#include <geotransport/stability.hpp>

using namespace geotransport;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s  %-38s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

Metric bump_metric(int dim, double amp, double width) {
    double w2 = width * width;
    auto c = [amp, w2](const Vec& x) { return 1.0 + amp * std::exp(-dot(x, x) / w2); };
    auto dc = [amp, w2](const Vec& x) {
        return (-2.0 * amp * std::exp(-dot(x, x) / w2) / w2) * x;
    };
    return Metric::conformal(dim, c, dc);
}

CoefficientPair pair2d(double a_amp, double k_amp, Vec a_center, double a_width, double aniso) {
    CoefficientPair cp;
    cp.a = gaussian_attenuation(a_amp, a_center, a_width, 0.75);
    cp.k = cosine_scattering(k_amp, vec2(0.0, 0.0), 0.6, 0.75, aniso, 2);
    cp.support_radius = 0.75;
    return cp;
}

// linear interpolation between two admissible pairs, preserving separability
std::function<CoefficientPair(double)> interpolated(const CoefficientPair& base,
                                                    const CoefficientPair& tilde) {
    return [base, tilde](double d) {
        CoefficientPair out;
        out.support_radius = std::max(base.support_radius, tilde.support_radius);
        AttenuationCoeff a0 = base.a, a1 = tilde.a;
        out.a = {[a0, a1, d](const Vec& x, const Vec& v) {
            return (1.0 - d) * a0(x, v) + d * a1(x, v);
        }};
        for (const auto& t : base.k.terms) {
            PointFn A = t.A;
            out.k.terms.push_back(
                {[A, d](const Vec& x, const Vec& v) { return (1.0 - d) * A(x, v); }, t.B});
        }
        for (const auto& t : tilde.k.terms) {
            PointFn A = t.A;
            out.k.terms.push_back(
                {[A, d](const Vec& x, const Vec& v) { return d * A(x, v); }, t.B});
        }
        return out;
    };
}

std::vector<PhasePoint> interior_points_2d(const Manifold&, int n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-0.8, 0.8), A(0.0, 2.0 * M_PI);
    std::vector<PhasePoint> out;
    while (int(out.size()) < n) {
        Vec x = vec2(U(rng), U(rng));
        if (norm(x) > 1.15) continue;
        double a = A(rng);
        out.push_back({x, vec2(std::cos(a), std::sin(a))});
    }
    return out;
}

// ---- criterion 1: geometry sanity --------------------------------------

void criterion1() {
    Manifold man(Metric::euclidean(2), 1.0, 1.2, 0.01);
    double exit_err = 0.0;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-0.7, 0.7);
    for (int it = 0; it < 100; ++it) {
        Vec x = vec2(U(rng), U(rng));
        double ang = 4.5 * U(rng);
        Vec v = vec2(std::cos(ang), std::sin(ang));
        double b = dot(x, v);
        double texact = -b + std::sqrt(b * b + 1.44 - dot(x, x));
        BoundaryHit h = man.flow_out({x, v});
        exit_err = std::max(exit_err, dist(h.x, x + texact * v));
    }
    bool straight_ok = exit_err <= 1e-8;

    // constant conformal factor c = 2 doubles every length-type quantity
    Metric m2 = Metric::conformal(2, [](const Vec&) { return 2.0; },
                                  [](const Vec&) { return Vec{0.0, 0.0, 0.0}; });
    Manifold man2(m2, 1.0, 1.2, 0.01);
    double scale_err = 0.0;
    for (int it = 0; it < 25; ++it) {
        Vec x = vec2(U(rng), U(rng));
        double ang = 4.5 * U(rng);
        Vec e = vec2(std::cos(ang), std::sin(ang));
        double t1 = man.exit_time({x, e});
        double t2 = man2.exit_time({x, 0.5 * e});
        scale_err = std::max(scale_err, std::abs(t2 - 2.0 * t1));
        Vec y = vec2(U(rng), U(rng));
        if (dist(x, y) > 0.05) {
            double d1 = man.connect(x, y).distance;
            double d2 = man2.connect(x, y).distance;
            scale_err = std::max(scale_err, std::abs(d2 - 2.0 * d1));
        }
    }
    DiamC0Estimate g1 = man.estimate_diam_and_c0();
    DiamC0Estimate g2 = man2.estimate_diam_and_c0();
    scale_err = std::max(scale_err, std::abs(g2.diam - 2.0 * g1.diam));
    scale_err = std::max(scale_err, std::abs(g2.c0 - 2.0 * g1.c0));
    bool scaling_ok = scale_err <= 1e-8;

    // measure invariance of the boundary map: 3D curved metric, where the
    // finite-difference probe step is the dominant error, second order
    Manifold bump3(bump_metric(3, 0.25, 1.0), 1.0, 1.2, 0.01);
    MeasureInvarianceReport coarse = measure_invariance_check(bump3, 1.1, 12, 0.01);
    MeasureInvarianceReport fine = measure_invariance_check(bump3, 1.1, 12, 0.005);
    bool measure_ok = fine.max_defect <= 1e-4 && fine.max_defect * 4.0 <= coarse.max_defect;

    report("1 geometry sanity", straight_ok && scaling_ok && measure_ok,
           fmt("exit_err=%.2e scale_err=%.2e defect=%.2e ratio=%.2f", exit_err, scale_err,
               fine.max_defect,
               fine.max_defect > 0 ? coarse.max_defect / fine.max_defect : 0.0));
}

// ---- criteria 2 and 4: gauge invariance and class degeneracy ------------

struct GaugeProbe {
    double opnorm_default = 0.0;
    double opnorm_refined = 0.0;
};

void criteria2and4() {
    Manifold man(Metric::euclidean(2), 1.0, 1.2, 0.01);
    CoefficientPair cp = pair2d(0.5, 0.3, vec2(0.2, 0.1), 0.5, 0.4);
    PhaseGrid grid_def{2, 1.2, 33, DirectionGrid::make(2, 64, 1)};
    PhaseGrid grid_ref{2, 1.2, 41, DirectionGrid::make(2, 80, 1)};
    GammaGridSpec gs_def{128, 1, 64, 1}, gs_ref{160, 1, 80, 1};

    std::vector<double> strengths = {0.05, 0.15, 0.3};
    std::vector<GaugeProbe> probes;
    TransportWorkspace ws_def(man, cp, grid_def, {});
    TransportWorkspace ws_ref(man, cp, grid_ref, {});
    GammaGrid gm_def(man, 1.2, -1, gs_def), gp_def(man, 1.2, +1, gs_def);
    GammaGrid gm_ref(man, 1.2, -1, gs_ref), gp_ref(man, 1.2, +1, gs_ref);
    OpNormOptions nopt;
    nopt.probe_positions = 3;
    nopt.probe_directions = 1;

    CoefficientPair strongest_image;
    for (double s : strengths) {
        PointFn h = [s](const Vec& x, const Vec& v) {
            return s * (x[0] * x[0] - 0.5 * x[1] + 0.3 * v[0]);
        };
        Gauge g = make_polynomial_gauge(man, h);
        CoefficientPair image = apply_gauge(man, cp, g);
        TransportWorkspace wg_def(man, image, grid_def, {});
        TransportWorkspace wg_ref(man, image, grid_ref, {});
        GaugeProbe pr;
        pr.opnorm_default = opnorm_L1(ws_def, wg_def, gm_def, gp_def, nopt).value;
        pr.opnorm_refined = opnorm_L1(ws_ref, wg_ref, gm_ref, gp_ref, nopt).value;
        probes.push_back(pr);
        if (s == strengths.back()) strongest_image = image;
    }
    bool c2 = true;
    std::string c2d;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        c2 = c2 && probes[i].opnorm_default <= 5e-3 &&
             probes[i].opnorm_refined < probes[i].opnorm_default;
        c2d += fmt("%s[%.2e->%.2e]", i ? " " : "", probes[i].opnorm_default,
                   probes[i].opnorm_refined);
    }
    report("2 gauge invariance of the operator", c2, c2d);

    // criterion 4: the same gauge image is far as a coefficient pair but
    // indistinguishable as an equivalence class
    double coeff_dist = 0.0;
    for (const PhasePoint& p : interior_points_2d(man, 400, 11))
        coeff_dist = std::max(
            coeff_dist, std::abs(cp.eval_a(p.x, p.v) - strongest_image.eval_a(p.x, p.v)));
    double eps = probes.back().opnorm_default;
    ClassDistanceReport cd = class_distance_upper(man, cp, strongest_image, "n2", grid_def);
    bool c4 = coeff_dist > 0.1 && eps <= 5e-3 && cd.delta_upper <= 1e-2;
    report("4 gauge-direction degeneracy", c4,
           fmt("coeff_dist=%.3f eps=%.2e delta_upper=%.2e", coeff_dist, eps, cd.delta_upper));
}

// ---- criterion 3: 3D stability certification ----------------------------

void criterion3() {
    auto t0 = std::chrono::steady_clock::now();
    Manifold man(Metric::euclidean(3), 1.0, 1.2, 0.02);
    CoefficientPair base;
    base.a = gaussian_attenuation(0.5, {0.1, 0.05, 0.0}, 0.5, 0.75);
    base.k = cosine_scattering(0.2, {0.0, 0.0, 0.0}, 0.6, 0.75, 0.4, 3);
    base.support_radius = 0.75;
    CoefficientPair tilde;
    tilde.a = gaussian_attenuation(0.5, {-0.05, 0.1, 0.05}, 0.55, 0.75);
    tilde.k = cosine_scattering(0.18, {0.05, 0.0, 0.0}, 0.55, 0.75, 0.3, 3);
    tilde.support_radius = 0.75;

    StabilitySetup st;
    st.man = &man;
    st.baseline = base;
    st.perturbed = interpolated(base, tilde);
    st.mode = "n3";
    st.deltas = {0.01, 0.02, 0.05};
    st.phase_grid = PhaseGrid{3, 1.2, 13, DirectionGrid::make(3, 8, 8)};
    st.gamma_spec = GammaGridSpec{8, 4, 8, 8};
    st.opnorm.probe_positions = 3;
    st.opnorm.probe_directions = 1;
    st.opnorm.beam_cells = 2;
    st.chain_sample_count = 32;
    st.tol = 1e-3;
    st.sigma_bound = 0.5;
    st.rho_bound = 0.2;
    StabilityReport rep = run_stability_experiment(st);

    bool ok = rep.rows.size() == 3;
    std::string detail = fmt("Sigma=%.2f rho=%.2f C(row0)=%.3g;", st.sigma_bound, st.rho_bound,
                             rep.rows.empty() ? 0.0 : rep.rows[0].C);
    for (const StabilityRow& r : rep.rows) {
        bool row_ok = r.error.empty() && r.verdict && r.a_ok && r.k_ok && r.cs_margin > 0.4;
        ok = ok && row_ok;
        if (!r.error.empty())
            detail += fmt(" d=%.2f ERROR(%s)", r.delta, r.error.c_str());
        else
            detail += fmt(" d=%.2f eps=%.2e Du=%.2e Ce=%.2e cs=%.2f%s", r.delta, r.eps,
                          r.delta_upper, r.C_eps, r.cs_margin, row_ok ? "" : " VIOLATED");
    }
    double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    ok = ok && mins <= 30.0;
    detail += fmt(" runtime=%.1fmin", mins);
    report("3 stability certification (n=3)", ok, detail);
}

// ---- criteria 5, 6, 8: 2D sweep, chain inequalities, ballistic estimates --

void criteria568() {
    Manifold man(Metric::euclidean(2), 1.0, 1.2, 0.01);
    CoefficientPair base = pair2d(0.5, 0.25, vec2(0.2, 0.1), 0.5, 0.4);
    CoefficientPair tilde = pair2d(0.6, 0.3, vec2(0.05, 0.15), 0.55, 0.3);
    auto perturbed = interpolated(base, tilde);

    StabilitySetup st;
    st.man = &man;
    st.baseline = base;
    st.perturbed = perturbed;
    st.mode = "n2";
    st.deltas = {0.01, 0.02, 0.05};
    st.phase_grid = PhaseGrid{2, 1.2, 33, DirectionGrid::make(2, 48, 1)};
    st.gamma_spec = GammaGridSpec{96, 1, 48, 1};
    st.chain_sample_count = 32;
    st.tol = 1e-3;
    StabilityReport rep = run_stability_experiment(st);

    // criterion 5: trial-gauge chain inequalities on every row
    bool c5 = !rep.rows.empty();
    double worst5 = 0.0;
    for (const StabilityRow& r : rep.rows) {
        c5 = c5 && r.error.empty();
        double w = std::max({r.chain.less_epsilon_violation, r.chain.final_a_violation,
                             r.chain.lower_E_violation, r.chain.FF_violation});
        worst5 = std::max(worst5, w);
        c5 = c5 && w <= 1e-3 && r.chain.samples >= 32;
    }
    report("5 trial-gauge chain", c5, fmt("worst_violation=%.2e rows=%zu", worst5,
                                          rep.rows.size()));

    // criterion 6: pointwise ballistic estimates at the strongest perturbation
    {
        const StabilityRow& row = rep.rows.back();
        CoefficientPair cpb = perturbed(row.delta);
        std::vector<PhasePoint> samples = chain_samples(man, 32);
        BalCheck1 b1 = check_bal_estimate1(man, base, cpb, samples, row.eps);
        BalCheck2 b2 =
            check_bal_estimate2(man, base, cpb, DirectionGrid::make(2, 48, 1), samples, row.eps);
        bool c6 = b1.samples >= 32 && b1.worst_violation <= 1e-3 && b2.samples >= 32 &&
                  b2.worst_violation <= 1e-3;
        report("6 ballistic kernel estimates", c6,
               fmt("viol1=%.2e viol2=%.2e samples=%d/%d", b1.worst_violation,
                   b2.worst_violation, b1.samples, b2.samples));
    }

    // criterion 8: 2D-mode certification
    {
        bool c8 = !rep.rows.empty();
        double worst_fr = 0.0;
        std::vector<double> slopes;
        for (const StabilityRow& r : rep.rows) {
            worst_fr = std::max({worst_fr, r.chain.rho_violation, r.chain.lower_E_violation,
                                 r.chain.FF_violation});
            if (r.eps > 0.0) slopes.push_back(r.delta_upper / r.eps);
        }
        c8 = c8 && worst_fr <= 1e-3;
        // empirical constant stable across the sweep (within +-25% of its mean)
        double mean = 0.0;
        for (double s : slopes) mean += s;
        mean /= std::max<std::size_t>(1, slopes.size());
        for (double s : slopes) c8 = c8 && std::abs(s - mean) <= 0.25 * mean;
        // scattered-kernel closeness (beta-beta) at the strongest perturbation
        const StabilityRow& row = rep.rows.back();
        CoefficientPair cpb = perturbed(row.delta);
        RepresentativePair rp = build_representative(man, base, cpb, st.phase_grid);
        TransportWorkspace ws_rep(man, rp.pair, st.phase_grid, {});
        TransportWorkspace ws_b(man, cpb, st.phase_grid, {});
        GammaGrid gm(man, 1.2, -1, st.gamma_spec), gp(man, 1.2, +1, st.gamma_spec);
        StarNormReport star = star_norm_diff_2d(ws_rep, ws_b, gm, gp, 4, 4);
        double beta_violation = star.beta_sup - row.eps;
        c8 = c8 && beta_violation <= 1e-3;
        // note: the paper-side constant for the 2D theorem depends on external
        // single-scattering estimates; C_emp below is the measured surrogate
        report("8 two-dimensional certification", c8,
               fmt("F/rho_viol=%.2e beta_viol=%.2e C_emp=%.3f..%.3f", worst_fr, beta_violation,
                   slopes.empty() ? 0.0 : *std::min_element(slopes.begin(), slopes.end()),
                   slopes.empty() ? 0.0 : *std::max_element(slopes.begin(), slopes.end())));
    }
}

// ---- criterion 7: isometry under domain transport ------------------------

void criterion7() {
    Manifold man(Metric::euclidean(2), 1.0, 1.2, 0.01);
    CoefficientPair cpa = pair2d(0.5, 0.25, vec2(0.2, 0.1), 0.5, 0.4);
    CoefficientPair cpb = pair2d(0.53, 0.26, vec2(0.2, 0.1), 0.5, 0.4);
    PhaseGrid grid{2, 1.2, 25, DirectionGrid::make(2, 24, 1)};
    IsometryReport gen = check_isometry(man, cpa, cpb, 1.1, grid, GammaGridSpec{32, 1, 16, 1});

    CoefficientPair ba = cpa, bb = cpb;
    ba.k = {};
    bb.k = {};
    IsometryReport bal = check_isometry(man, ba, bb, 1.1, grid, GammaGridSpec{32, 1, 16, 1});
    bool ok = gen.relative_gap <= 1e-2 && bal.relative_gap <= 1e-6;
    report("7 isometry under domain transport", ok,
           fmt("generic_gap=%.2e ballistic_gap=%.2e", gen.relative_gap, bal.relative_gap));
}

// ---- criterion 9: beam family -------------------------------------------

void criterion9() {
    Manifold man(Metric::euclidean(2), 1.0, 1.2, 0.01);
    // a fixed boundary target at fractional cell position 1/3 in both chart
    // parameters at every resolution in the ladder, so the node-snapping
    // offset (the leading pairing error) scales exactly with the cell size
    // f has its strongest variation along the boundary angle near the target
    // (placed near phi = pi/2), so the snapping offset dominates the
    // second-order box-average term and the error halves cleanly
    auto f = [](const Vec& x, const Vec& v) {
        return x[0] + 0.05 * x[0] * x[1] + 0.1 * v[0];
    };
    const int n0_pos = 96, n0_dir = 48;
    const int i_pos = 72, i_dir = 31;  // base-resolution cell of the target
    double phi_star = -M_PI + (i_pos + 1.0 / 3.0) * (2.0 * M_PI / n0_pos);
    double s_star = -1.0 + (i_dir + 1.0 / 3.0) * (2.0 / n0_dir);

    SphereChart chart(man, 1.2);
    Vec xs = chart.point(phi_star, 0.0);
    Frame fr = chart.frame_at(xs);
    Vec vs = chart.direction(fr, -1, s_star, 0.0);
    double f_star = f(xs, vs);

    double mass_err = 0.0;
    std::vector<double> errs;
    for (int scale : {1, 2, 4}) {
        GammaGrid gm(man, 1.2, -1, GammaGridSpec{n0_pos * scale, 1, n0_dir * scale, 1});
        int np = n0_dir * scale;
        double hphi = 2.0 * M_PI / (n0_pos * scale), hs = 2.0 / np;
        std::size_t node =
            std::size_t((phi_star + M_PI) / hphi) * np + std::size_t((s_star + 1.0) / hs);
        BeamSource beam(gm, node, 4);
        double mass = 0.0, pairing = 0.0;
        for (const auto& nd : gm.nodes()) {
            double b = beam(nd.x, nd.v);
            if (b == 0.0) continue;
            mass += b * nd.weight;
            pairing += b * nd.weight * f(nd.x, nd.v);
        }
        mass_err = std::max(mass_err, std::abs(mass - 1.0));
        errs.push_back(std::abs(pairing - f_star));
    }
    double r1 = errs[0] / errs[1], r2 = errs[1] / errs[2];
    bool ok = mass_err <= 1e-6 && r1 >= 1.5 && r1 <= 3.0 && r2 >= 1.5 && r2 <= 3.0;
    report("9 beam family", ok,
           fmt("mass_err=%.2e errors=%.2e/%.2e/%.2e ratios=%.2f,%.2f", mass_err, errs[0],
               errs[1], errs[2], r1, r2));
}

// ---- criterion 10: solver contract ---------------------------------------

void criterion10() {
    Manifold man(Metric::euclidean(2), 1.0, 1.2, 0.01);
    CoefficientPair cp = pair2d(0.5, 0.3, vec2(0.2, 0.1), 0.5, 0.4);
    PhaseGrid grid{2, 1.2, 33, DirectionGrid::make(2, 48, 1)};
    TransportWorkspace ws(man, cp, grid, {});
    CriticalityReport crit = check_subcritical(man, cp, grid.dirs);
    BoundarySource src = [](const Vec& x, const Vec&) { return 1.0 + 0.3 * x[1]; };
    SolveStats stdat;
    Field u = ws.solve(src, &stdat);
    double worst_ratio = 0.0;
    for (double r : stdat.ratios) worst_ratio = std::max(worst_ratio, r);
    bool ratios_ok = worst_ratio <= crit.cs_value + 5e-3;

    // fixed-point residual along 100 random characteristics
    Field ju = ws.apply_J(src);
    Field ku = ws.apply_K(u);
    std::mt19937_64 rng(41);
    double resid = 0.0;
    int checked = 0;
    const std::size_t nd = grid.dirs.size();
    while (checked < 100) {
        std::size_t ix = rng() % grid.nx();
        if (norm(grid.node(ix)) >= 1.19) continue;
        std::size_t i = ix * nd + rng() % nd;
        resid = std::max(resid, std::abs(u[i] - (ju[i] + ku[i])));
        ++checked;
    }
    bool resid_ok = resid <= 1e-4;

    // k = 0: the outgoing trace equals the closed-form attenuated transport
    // for a radial gaussian attenuation (erf along the chord)
    CoefficientPair pure;
    double amp = 0.5, w = 0.28;
    pure.a = {[amp, w](const Vec& x, const Vec&) {
        return amp * std::exp(-dot(x, x) / (w * w));
    }};
    pure.support_radius = 1.199;
    SolverOptions fine;
    fine.line_step = 0.002;
    TransportWorkspace wsb(man, pure, grid, fine);
    BoundarySource one = [](const Vec&, const Vec&) { return 1.0; };
    Field ub = wsb.solve(one);
    GammaGrid gp(man, 1.2, +1, GammaGridSpec{24, 1, 12, 1});
    double ballistic_err = 0.0;
    for (const auto& node : gp.nodes()) {
        BoundaryHit in = man.flow_in({node.x, node.v});
        double b = dot(in.x, in.v);
        double p2 = dot(in.x, in.x) - b * b;  // squared impact parameter
        double t1 = -b, t2 = in.time - (-b);
        double integral = amp * std::exp(-p2 / (w * w)) * 0.5 * std::sqrt(M_PI) * w *
                          (std::erf(t2 / w) + std::erf(t1 / w));
        double expect = std::exp(-integral);
        double got = wsb.trace_exit(ub, one, {node.x, node.v});
        ballistic_err = std::max(ballistic_err, std::abs(got - expect));
    }
    bool ballistic_ok = ballistic_err <= 1e-7;

    report("10 solver contract", ratios_ok && resid_ok && ballistic_ok,
           fmt("ratio=%.3f<=%.3f resid=%.2e k0_err=%.2e", worst_ratio, crit.cs_value + 5e-3,
               resid, ballistic_err));
}

// ---- CLI contract: determinism and exit codes -----------------------------

void cli_contract() {
#ifdef GEOTRANSPORT_CLI_PATH
    const char* cli = GEOTRANSPORT_CLI_PATH;
    std::string dir = "acceptance_cli_tmp";
    std::string cfg = dir + "/sweep.cfg";
    std::ignore = std::system(("rm -rf " + dir + " && mkdir -p " + dir + "/r1 " + dir + "/r2").c_str());
    {
        std::ofstream out(cfg);
        out << "[geometry]\ndim = 2\nmetric = euclidean\nstep = 0.02\n"
            << "[coefficients]\na_family = gaussian\na_amp = 0.5\na_width = 0.5\n"
            << "k_family = cosine\nk_amp = 0.25\nk_width = 0.6\nk_aniso = 0.4\n"
            << "support_radius = 0.75\n"
            << "[coefficients_tilde]\na_amp = 0.6\nk_amp = 0.3\n"
            << "[grids]\nboundary_points = 32\ndirections = 16\nphase_points = 17\n"
            << "[experiment]\nmode = n2\ndeltas = 0.02\nchain_samples = 8\n"
            << "probe_positions = 2\n";
    }
    auto run = [&](const std::string& out) {
        std::string cmd = std::string(cli) + " stability --config " + cfg + " --out " + dir +
                          "/" + out + " --seed 7 > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    int s1 = run("r1"), s2 = run("r2");
    auto slurp = [&](const std::string& p) {
        std::ifstream in(dir + "/" + p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    std::string csv1 = slurp("r1/sweep.csv"), csv2 = slurp("r2/sweep.csv");
    bool ok = s1 == 0 && s2 == 0 && !csv1.empty() && csv1 == csv2;
    report("extra: CLI determinism", ok,
           fmt("exit=%d/%d csv_bytes=%zu identical=%s", s1, s2, csv1.size(),
               csv1 == csv2 ? "yes" : "no"));
    std::ignore = std::system(("rm -rf " + dir).c_str());
#endif
}

}  // namespace

int main() {
    criterion1();
    criteria2and4();
    criterion3();
    criteria568();
    criterion7();
    criterion9();
    criterion10();
    cli_contract();
    std::printf("%s (%d failure%s)\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures;
}
