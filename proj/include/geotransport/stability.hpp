#pragma once

// End-to-end stability experiments: measure the operator distance epsilon,
// build the representative pair, evaluate the explicit constants, and certify
// each inequality of the stability argument with measured quantities.

#include <chrono>
#include <optional>

#include "gauge.hpp"

namespace geotransport {

// ---- explicit constants -------------------------------------------------

inline double constant_C1(double sigma, double rho, int n, double diam, double c0, double eps) {
    if (c0 <= 0.0) throw solver_error("constant_C1 requires c0 > 0");
    double omega = unit_ball_volume(n - 1);
    double e_ds = std::exp(diam * sigma);
    return (1.0 + 2.0 * diam * rho * omega * e_ds) *
           std::exp(2.0 * diam * (eps * e_ds / c0 + sigma));
}

// g-volume of the measurement boundary (the outer chart sphere)
inline double boundary_volume(const Manifold& man, int n_quad = 256) {
    SphereChart chart(man, man.r_outer());
    double vol = 0.0;
    if (man.dim() == 2) {
        double dp = 2.0 * M_PI / n_quad;
        for (int i = 0; i < n_quad; ++i) vol += chart.pos_density(-M_PI + dp * (i + 0.5)) * dp;
        return vol;
    }
    int nm = n_quad / 8, nb = n_quad / 4;
    double dmu = 2.0 / nm, db = 2.0 * M_PI / nb;
    for (int i = 0; i < nm; ++i)
        for (int j = 0; j < nb; ++j)
            vol += chart.pos_density(-1.0 + dmu * (i + 0.5), -M_PI + db * (j + 0.5)) * dmu * db;
    return vol;
}

inline double constant_C(double vol_boundary, double sigma, int n, double diam, double c0,
                         double C1) {
    double omega = unit_ball_volume(n - 1);
    return std::max(vol_boundary * omega * C1, std::exp(diam * sigma) / c0);
}

// ---- sample families ------------------------------------------------------

// deterministic spread of incoming boundary phase points used by every
// certified inequality (and folded into the ballistic part of epsilon)
inline std::vector<PhasePoint> chain_samples(const Manifold& man, int n) {
    SphereChart chart(man, man.r_outer());
    std::vector<PhasePoint> out;
    int npos = std::max(1, n / 4);
    std::vector<Vec> xs = man.sphere_points(man.r_outer(), npos);
    const double obliques[4] = {-0.55, -0.15, 0.2, 0.6};
    for (std::size_t i = 0; i < xs.size() && int(out.size()) < n; ++i) {
        Frame f = chart.frame_at(xs[i]);
        for (int j = 0; j < 4 && int(out.size()) < n; ++j) {
            if (man.dim() == 2) {
                out.push_back({xs[i], chart.direction(f, -1, obliques[j])});
            } else {
                double q = 0.15 + 0.2 * j;
                out.push_back({xs[i], chart.direction(f, -1, q, 0.8 + 0.9 * j)});
            }
        }
    }
    return out;
}

// ---- certified inequalities -----------------------------------------------

// Eq. pair (attenuation closeness): for boundary samples, the chord integral
// of (a~ - a) is controlled by the ballistic difference, which is <= epsilon.
struct BalCheck1 {
    double worst_violation = -std::numeric_limits<double>::infinity();  // LHS - eps
    double max_lhs = 0.0;
    int samples = 0;
};

inline BalCheck1 check_bal_estimate1(const Manifold& man, const CoefficientPair& cpa,
                                     const CoefficientPair& cpb,
                                     const std::vector<PhasePoint>& samples, double eps,
                                     double hs = -1.0) {
    BalCheck1 r;
    for (const PhasePoint& p : samples) {
        double ea = ballistic_amplitude(man, cpa, p.x, p.v, hs).A0;
        double eb = ballistic_amplitude(man, cpb, p.x, p.v, hs).A0;
        double lhs = std::abs(ea - eb);
        r.max_lhs = std::max(r.max_lhs, lhs);
        r.worst_violation = std::max(r.worst_violation, lhs - eps);
        ++r.samples;
    }
    return r;
}

// single-scattering estimate (n >= 3): for each sample,
//   LHS = integral of |k - k~| F over (t, w)
//   RHS = eps + sup|F - F~| * integral of k~ over (t, w)
struct BalCheck2 {
    double worst_violation = -std::numeric_limits<double>::infinity();
    double f_diff_sup = 0.0;
    int samples = 0;
};

inline BalCheck2 check_bal_estimate2(const Manifold& man, const CoefficientPair& cpa,
                                     const CoefficientPair& cpb, const DirectionGrid& dirs,
                                     const std::vector<PhasePoint>& samples, double eps,
                                     double hs = -1.0) {
    BalCheck2 r;
    double step = (hs > 0.0 ? hs : man.step()) * 8.0;
    struct Row {
        double lhs = 0.0, mass_b = 0.0;
    };
    std::vector<Row> rows(samples.size());
    std::vector<double> fsup(samples.size(), 0.0);
    parallel_for(samples.size(), [&](std::size_t si) {
        const PhasePoint& p = samples[si];
        double tau_p = man.exit_time(p);
        std::size_t nseg = std::max<std::size_t>(2, std::size_t(std::ceil(tau_p / step)));
        if (nseg % 2) ++nseg;
        double dt = tau_p / double(nseg);
        std::vector<double> lhs_t(nseg + 1, 0.0), massb_t(nseg + 1, 0.0);
        PhasePoint y = p;
        for (std::size_t s = 0; s <= nseg; ++s) {
            if (s > 0) y = man.metric().is_euclidean()
                               ? PhasePoint{p.x + (dt * double(s)) * p.v, p.v}
                               : man.rk4_step(y, dt);
            if (norm(y.x) >= std::max(cpa.support_radius, cpb.support_radius)) continue;
            for (std::size_t j = 0; j < dirs.size(); ++j) {
                Vec w = man.metric().fiber_dir(y.x, dirs.u[j]);
                double ka = cpa.eval_k(y.x, w, y.v);
                double kb = cpb.eval_k(y.x, w, y.v);
                if (ka == 0.0 && kb == 0.0) continue;
                double Fa = broken_attenuation_F(man, cpa, p.x, y.x, w, hs);
                double Fb = broken_attenuation_F(man, cpb, p.x, y.x, w, hs);
                fsup[si] = std::max(fsup[si], std::abs(Fa - Fb));
                lhs_t[s] += std::abs(ka - kb) * Fa * dirs.w[j];
                massb_t[s] += std::abs(kb) * dirs.w[j];
            }
        }
        rows[si].lhs = simpson(lhs_t, dt);
        rows[si].mass_b = simpson(massb_t, dt);
    });
    for (double f : fsup) r.f_diff_sup = std::max(r.f_diff_sup, f);
    for (const Row& row : rows) {
        double rhs = eps + r.f_diff_sup * row.mass_b;
        r.worst_violation = std::max(r.worst_violation, row.lhs - rhs);
        ++r.samples;
    }
    return r;
}

// trial-gauge chain: each inequality of the reconstruction argument asserted
// with measured quantities, in derivation order
struct ChainReport {
    double estimate1_violation = 0.0;   // |chord integral| <= e^{diam Sigma} |E - E~|
    double less_epsilon_violation = 0.0;  // |log phi| on Gamma_+ <= e^{diam Sigma} eps
    double final_a_violation = 0.0;       // |a' - a~| <= eps e^{diam Sigma} / c0
    double lower_E_violation = 0.0;       // F' >= exp(-2(eps e^{dS} + diam Sigma))
    double FF_violation = 0.0;            // |F~ - F'| <= 2 eps e^{diam Sigma}
    double rho_violation = 0.0;           // |k'| <= rho exp(4 eps e^{diam Sigma})
    int samples = 0;
};

inline ChainReport check_trial_gauge_chain(const Manifold& man, const CoefficientPair& cpa,
                                           const CoefficientPair& cpb,
                                           const RepresentativePair& rep,
                                           const std::vector<PhasePoint>& samples, double eps,
                                           double sigma, double rho, double diam, double c0,
                                           const DirectionGrid& dirs, double hs = -1.0) {
    ChainReport r;
    double e_ds = std::exp(diam * sigma);
    AttenuationCoeff a = cpa.a, at = cpb.a;
    double Rs = std::max(cpa.support_radius, cpb.support_radius);
    PointFn diff = [a, at, Rs](const Vec& x, const Vec& v) {
        return norm(x) < Rs ? at(x, v) - a(x, v) : 0.0;
    };
    for (const PhasePoint& p : samples) {
        double tau = man.exit_time(p);
        double G = flow_integral(man, diff, p, tau, hs);
        double ea = ballistic_amplitude(man, cpa, p.x, p.v, hs).A0;
        double eb = ballistic_amplitude(man, cpb, p.x, p.v, hs).A0;
        r.estimate1_violation =
            std::max(r.estimate1_violation, std::abs(G) - e_ds * std::abs(ea - eb));
        r.less_epsilon_violation = std::max(r.less_epsilon_violation, std::abs(G) - e_ds * eps);
        r.final_a_violation =
            std::max(r.final_a_violation, std::abs(G) / std::max(tau, c0) - eps * e_ds / c0);

        // broken attenuation bounds along the same chord, scattered midway
        PhasePoint y = man.flow(p, 0.5 * tau);
        if (norm(y.x) < man.r_inner()) {
            for (std::size_t j = 0; j < dirs.size(); j += std::max<std::size_t>(1, dirs.size() / 8)) {
                Vec w = man.metric().fiber_dir(y.x, dirs.u[j]);
                double Fp = broken_attenuation_F(man, rep.pair, p.x, y.x, w, hs);
                double Fb = broken_attenuation_F(man, cpb, p.x, y.x, w, hs);
                r.lower_E_violation = std::max(
                    r.lower_E_violation, std::exp(-2.0 * (eps * e_ds + diam * sigma)) - Fp);
                r.FF_violation = std::max(r.FF_violation, std::abs(Fb - Fp) - 2.0 * eps * e_ds);
                double kp = rep.pair.eval_k(y.x, w, y.v);
                r.rho_violation = std::max(
                    r.rho_violation, std::abs(kp) - rho * std::exp(4.0 * eps * e_ds));
            }
        }
        ++r.samples;
    }
    return r;
}

// ---- isometry of the measurement boundary ----------------------------------

struct IsometryReport {
    double inner_norm = 0.0;
    double outer_norm = 0.0;
    double relative_gap = 0.0;
    double ballistic_gap = 0.0;  // gap of the ballistic components alone
};

// First crossing of the sphere |x| = r by the forward flow; requires the
// geodesic to actually reach it.
inline std::optional<PhasePoint> flow_to_radius(const Manifold& man, const PhasePoint& p,
                                                double r) {
    double r2 = r * r;
    if (dot(p.x, p.x) <= r2) return p;
    PhasePoint q = p;
    long cap = long(100.0 * (2.0 * man.r_outer() / man.step())) + 10;
    for (long i = 0; i < cap; ++i) {
        PhasePoint nq = man.rk4_step(q, man.step());
        if (dot(nq.x, nq.x) <= r2) {
            double lo = 0.0, hi = man.step();
            PhasePoint mid = nq;
            for (int it = 0; it < 80; ++it) {
                double s = 0.5 * (lo + hi);
                mid = man.rk4_step(q, s);
                double res = norm(mid.x) - r;
                if (std::abs(res) <= 1e-12) break;
                (res > 0.0 ? lo : hi) = s;
            }
            return mid;
        }
        if (dot(nq.x, nq.x) >= man.r_outer() * man.r_outer() && i > 2) return std::nullopt;
        q = nq;
    }
    return std::nullopt;
}

// Measure the operator distance with the measurement boundary at r_mid and at
// r_outer. Each boundary's ballistic sup also scans the other boundary's
// geodesic family (projected through the flow), so for ballistic-only pairs
// the two sups run over identical chords.
inline IsometryReport check_isometry(const Manifold& man, const CoefficientPair& cpa,
                                     const CoefficientPair& cpb, double r_mid,
                                     const PhaseGrid& grid, const GammaGridSpec& gspec,
                                     SolverOptions sopt = {}, OpNormOptions nopt = {}) {
    if (r_mid <= std::max(cpa.support_radius, cpb.support_radius) || r_mid >= man.r_outer())
        throw solver_error("isometry radius must separate the support from the boundary");
    Manifold inner(man.metric(), man.r_inner(), r_mid, man.step());

    GammaGrid gm_out(man, man.r_outer(), -1, gspec), gp_out(man, man.r_outer(), +1, gspec);
    GammaGrid gm_in(inner, r_mid, -1, gspec), gp_in(inner, r_mid, +1, gspec);

    // project each boundary's Gamma_- nodes onto the other boundary
    OpNormOptions opt_out = nopt, opt_in = nopt;
    for (const auto& nd : gm_out.nodes()) {
        auto q = flow_to_radius(man, {nd.x, nd.v}, r_mid);
        if (q) opt_in.extra_ballistic_samples.push_back(*q);
    }
    for (const auto& nd : gm_in.nodes()) {
        BoundaryHit h = man.flow_in({nd.x, nd.v});
        opt_out.extra_ballistic_samples.push_back({h.x, h.v});
    }

    TransportWorkspace wa_out(man, cpa, grid, sopt), wb_out(man, cpb, grid, sopt);
    TransportWorkspace wa_in(inner, cpa, grid, sopt), wb_in(inner, cpb, grid, sopt);
    OpNormReport outer = opnorm_L1(wa_out, wb_out, gm_out, gp_out, opt_out);
    OpNormReport inner_rep = opnorm_L1(wa_in, wb_in, gm_in, gp_in, opt_in);

    IsometryReport rep;
    rep.inner_norm = inner_rep.value;
    rep.outer_norm = outer.value;
    double denom = std::max({rep.inner_norm, rep.outer_norm, 1e-300});
    rep.relative_gap = std::abs(rep.inner_norm - rep.outer_norm) / denom;
    double bden = std::max({inner_rep.ballistic_sup, outer.ballistic_sup, 1e-300});
    rep.ballistic_gap = std::abs(inner_rep.ballistic_sup - outer.ballistic_sup) / bden;
    return rep;
}

// ---- the sweep --------------------------------------------------------

struct StabilityConstants {
    double sigma = 0.0, rho = 0.0;
    double diam = 0.0, c0 = 0.0;
    double vol_boundary = 0.0;
    double omega = 0.0;
    int n = 0;
};

struct StabilityRow {
    double delta = 0.0;
    double eps = 0.0;
    double delta_upper = 0.0;
    double C1 = 0.0, C = 0.0, C_eps = 0.0;
    bool verdict = false;
    double a_component = 0.0, k_component = 0.0;
    bool a_ok = false, k_ok = false;
    double cs_margin = 0.0;
    ChainReport chain;
    std::string error;
    double runtime_sec = 0.0;
};

struct StabilitySetup {
    const Manifold* man = nullptr;
    CoefficientPair baseline;
    std::function<CoefficientPair(double)> perturbed;
    std::string mode = "n3";  // "n3" | "n2"
    std::vector<double> deltas;
    PhaseGrid phase_grid;
    GammaGridSpec gamma_spec;
    SolverOptions solver;
    OpNormOptions opnorm;
    int chain_sample_count = 32;
    double tol = 1e-3;
    // declared admissible-class bounds; when positive, the constants use
    // these instead of the measured sups (which must not exceed them)
    double sigma_bound = -1.0;
    double rho_bound = -1.0;
};

struct StabilityReport {
    StabilityConstants constants;
    std::vector<StabilityRow> rows;
    double c_emp = 0.0;  // fitted Delta_upper / eps slope
    bool all_verdicts = false;
};

inline StabilityReport run_stability_experiment(const StabilitySetup& setup) {
    const Manifold& man = *setup.man;
    StabilityReport rep;
    int n = man.dim();
    rep.constants.n = n;
    rep.constants.omega = unit_ball_volume(n - 1);
    DiamC0Estimate geo = man.estimate_diam_and_c0();
    rep.constants.diam = geo.diam;
    rep.constants.c0 = geo.c0;
    rep.constants.vol_boundary = boundary_volume(man);

    BoundsProfile base_b = measure_bounds(man, setup.baseline, setup.phase_grid.dirs);
    std::vector<PhasePoint> chain = chain_samples(man, setup.chain_sample_count);
    GammaGrid gm(man, man.r_outer(), -1, setup.gamma_spec);
    GammaGrid gp(man, man.r_outer(), +1, setup.gamma_spec);
    TransportWorkspace wsa(man, setup.baseline, setup.phase_grid, setup.solver);

    double ce_max = 0.0;
    bool all_ok = true;
    for (double delta : setup.deltas) {
        StabilityRow row;
        row.delta = delta;
        auto t0 = std::chrono::steady_clock::now();
        try {
            CoefficientPair cpb = setup.perturbed(delta);
            BoundsProfile bb = measure_bounds(man, cpb, setup.phase_grid.dirs);
            double sigma = std::max(base_b.sigma, bb.sigma);
            double rho = std::max(base_b.rho, bb.rho);
            if (setup.sigma_bound > 0.0) {
                if (sigma > setup.sigma_bound + 1e-9)
                    throw solver_error("pair exceeds the declared sigma bound");
                sigma = setup.sigma_bound;
            }
            if (setup.rho_bound > 0.0) {
                if (rho > setup.rho_bound + 1e-9)
                    throw solver_error("pair exceeds the declared rho bound");
                rho = setup.rho_bound;
            }
            rep.constants.sigma = std::max(rep.constants.sigma, sigma);
            rep.constants.rho = std::max(rep.constants.rho, rho);
            CriticalityReport crit = check_subcritical(man, cpb, setup.phase_grid.dirs);
            row.cs_margin = crit.cs_margin;
            if (!crit.cs_ok) throw solver_error("perturbed pair not subcritical");

            TransportWorkspace wsb(man, cpb, setup.phase_grid, setup.solver);
            OpNormOptions nopt = setup.opnorm;
            nopt.extra_ballistic_samples.insert(nopt.extra_ballistic_samples.end(), chain.begin(),
                                                chain.end());
            double eps;
            if (setup.mode == "n2") {
                StarNormReport star = star_norm_diff_2d(wsa, wsb, gm, gp, nopt.probe_positions,
                                                        nopt.beam_cells);
                double bal_chain = 0.0;
                for (const PhasePoint& p : chain) {
                    double ea = ballistic_amplitude(man, setup.baseline, p.x, p.v).A0;
                    double eb = ballistic_amplitude(man, cpb, p.x, p.v).A0;
                    bal_chain = std::max(bal_chain, std::abs(ea - eb));
                }
                eps = std::max(star.value, bal_chain);
            } else {
                OpNormReport on = opnorm_L1(wsa, wsb, gm, gp, nopt);
                eps = on.value;
            }
            row.eps = eps;

            ClassDistanceReport cd =
                class_distance_upper(man, setup.baseline, cpb, setup.mode, setup.phase_grid);
            row.delta_upper = cd.delta_upper;
            row.a_component = cd.a_diff_sup;
            row.k_component = cd.k_diff;

            row.C1 = constant_C1(sigma, rho, n, geo.diam, geo.c0, eps);
            row.C = constant_C(rep.constants.vol_boundary, sigma, n, geo.diam, geo.c0, row.C1);
            row.C_eps = row.C * eps;
            row.verdict = row.delta_upper <= row.C_eps + setup.tol;
            row.a_ok = row.a_component <= row.C_eps + setup.tol;
            row.k_ok = row.k_component <= row.C_eps + setup.tol;

            RepresentativePair rp =
                build_representative(man, setup.baseline, cpb, setup.phase_grid);
            row.chain = check_trial_gauge_chain(man, setup.baseline, cpb, rp, chain, eps, sigma,
                                                rho, geo.diam, geo.c0, setup.phase_grid.dirs);
            if (eps > 0.0) ce_max = std::max(ce_max, row.delta_upper / eps);
        } catch (const std::exception& e) {
            row.error = e.what();
            row.verdict = false;
        }
        row.runtime_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        all_ok = all_ok && row.verdict && row.error.empty();
        rep.rows.push_back(std::move(row));
    }
    rep.c_emp = ce_max;
    rep.all_verdicts = all_ok;
    return rep;
}

}  // namespace geotransport
