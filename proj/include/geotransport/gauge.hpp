#pragma once

// Gauge group action on coefficient pairs, the constructive trial/corrected
// gauge, the representative pair (a', k'), and equivalence-class distance
// upper bounds.
//
// Convention note: the literature writes the scattering kernel as k(x, v', v)
// with v' incoming and v outgoing; ScatterCoeff stores k(x, v_out, v_in).
// The gauge action k -> k * phi(x, v_out) / phi(x, v_in) is the same rule in
// either ordering.

#include <memory>

#include "albedo.hpp"

namespace geotransport {

struct Gauge {
    PointFn log_phi;
    PointFn dlog_phi;       // flow derivative D log phi
    double log_sup = 0.0;   // recorded grid bound for |log phi|
    double dlog_sup = 0.0;  // recorded grid bound for |D log phi|
    bool boundary_full = true;  // phi = 1 on all of dSM (trial gauge: Gamma_- only)
};

inline Gauge identity_gauge() {
    return {[](const Vec&, const Vec&) { return 0.0; },
            [](const Vec&, const Vec&) { return 0.0; }, 0.0, 0.0, true};
}

// integral of f(x, v) along the forward flow of p over [0, t1]
inline double flow_integral(const Manifold& man, const PointFn& f, const PhasePoint& p, double t1,
                            double hs = -1.0) {
    if (t1 <= 0.0) return 0.0;
    double step = hs > 0.0 ? hs : man.step();
    std::size_t nseg = std::max<std::size_t>(2, std::size_t(std::ceil(t1 / step)));
    if (nseg % 2) ++nseg;
    double dt = t1 / double(nseg);
    std::vector<double> samples(nseg + 1);
    if (man.metric().is_euclidean()) {
        for (std::size_t i = 0; i <= nseg; ++i) samples[i] = f(p.x + (dt * double(i)) * p.v, p.v);
    } else {
        PhasePoint q = p;
        for (std::size_t i = 0; i <= nseg; ++i) {
            samples[i] = f(q.x, q.v);
            if (i < nseg) q = man.rk4_step(q, dt);
        }
    }
    return simpson(samples, dt);
}

// record sup bounds of a gauge over an interior phase sample
inline void record_gauge_bounds(const Manifold& man, Gauge& g, int n_x = 7, int n_dir = 12) {
    double ls = 0.0, ds = 0.0;
    auto dirs = man.sphere_points(1.0, n_dir);
    for (const Vec& xr : man.sphere_points(1.0, n_x))
        for (int s = 1; s <= 3; ++s) {
            Vec x = (0.3 * s * man.r_outer() / 1.0) * xr;
            if (norm(x) >= man.r_outer()) continue;
            for (const Vec& u : dirs) {
                Vec v = man.metric().fiber_dir(x, u);
                ls = std::max(ls, std::abs(g.log_phi(x, v)));
                ds = std::max(ds, std::abs(g.dlog_phi(x, v)));
            }
        }
    g.log_sup = ls;
    g.dlog_sup = ds;
}

// verify phi = 1 on sampled boundary phase points
inline double gauge_boundary_defect(const Manifold& man, const Gauge& g, int n_samples = 64) {
    double worst = 0.0;
    SphereChart chart(man, man.r_outer());
    for (const Vec& x : man.sphere_points(man.r_outer(), n_samples)) {
        Frame f = chart.frame_at(x);
        for (int sgn : {-1, +1})
            for (double d1 : {-0.6, 0.0, 0.6}) {
                Vec v = chart.direction(f, sgn, d1, 0.9);
                worst = std::max(worst, std::abs(g.log_phi(x, v)));
            }
    }
    return worst;
}

inline CoefficientPair apply_gauge(const Manifold& man, const CoefficientPair& cp, const Gauge& g,
                                   bool check_boundary = true) {
    if (check_boundary && g.boundary_full) {
        double defect = gauge_boundary_defect(man, g);
        if (defect > 1e-8) throw solver_error("gauge violates phi = 1 on the boundary");
    }
    CoefficientPair out;
    // D log phi extends beyond the original coefficient support, all the way
    // to the boundary (inclusive), so the transformed pair must not be
    // truncated anywhere in the closed domain
    out.support_radius = man.r_outer() + man.step();
    PointFn lp = g.log_phi;
    PointFn dlp = g.dlog_phi;
    AttenuationCoeff a0 = cp.a;
    out.a = {[a0, dlp](const Vec& x, const Vec& v) { return a0(x, v) - dlp(x, v); }};
    if (!cp.k.terms.empty()) {
        // the multiplicative quotient is rank-1, so separability survives
        for (const auto& t : cp.k.terms) {
            PointFn A = t.A, B = t.B;
            out.k.terms.push_back(
                {[A, lp](const Vec& x, const Vec& v) { return A(x, v) * std::exp(lp(x, v)); },
                 [B, lp](const Vec& x, const Vec& vp) { return B(x, vp) * std::exp(-lp(x, vp)); }});
        }
    }
    if (cp.k.f) {
        ScatterFn kf = cp.k.f;
        out.k.f = [kf, lp](const Vec& x, const Vec& v, const Vec& vp) {
            return kf(x, v, vp) * std::exp(lp(x, v) - lp(x, vp));
        };
    }
    return out;
}

// log phi = tau_- tau_+ h vanishes on dSM; D log phi uses D tau_- = 1 and
// D tau_+ = -1, with Dh by a centered flow difference.
inline Gauge make_polynomial_gauge(const Manifold& man, const PointFn& h, double fd_delta = -1.0) {
    double delta = fd_delta > 0.0 ? fd_delta : man.step();
    const Manifold* mp = &man;
    Gauge g;
    g.log_phi = [mp, h](const Vec& x, const Vec& v) {
        TauPair tp = mp->travel_times({x, v});
        return tp.minus * tp.plus * h(x, v);
    };
    g.dlog_phi = [mp, h, delta](const Vec& x, const Vec& v) {
        TauPair tp = mp->travel_times({x, v});
        double d = std::min({delta, 0.5 * tp.minus + 1e-12, 0.5 * tp.plus + 1e-12});
        PhasePoint qp = mp->flow({x, v}, d);
        PhasePoint qm = mp->flow({x, v}, -d);
        double dh = (h(qp.x, qp.v) - h(qm.x, qm.v)) / (2.0 * d);
        return (tp.plus - tp.minus) * h(x, v) + tp.minus * tp.plus * dh;
    };
    g.boundary_full = true;
    record_gauge_bounds(man, g);
    return g;
}

// trial gauge of the reconstruction argument:
//   log phi(x, v) = -integral over the backward segment of (a~ - a),
// so phi = 1 on Gamma_- exactly and D log phi = a - a~ analytically.
inline Gauge trial_gauge(const Manifold& man, const PointFn& a, const PointFn& atilde,
                         double hs = -1.0) {
    const Manifold* mp = &man;
    PointFn diff = [a, atilde](const Vec& x, const Vec& v) { return atilde(x, v) - a(x, v); };
    Gauge g;
    g.log_phi = [mp, diff, hs](const Vec& x, const Vec& v) {
        BoundaryHit in = mp->flow_in({x, v});
        return -flow_integral(*mp, diff, {in.x, in.v}, in.time, hs);
    };
    g.dlog_phi = [a, atilde](const Vec& x, const Vec& v) { return a(x, v) - atilde(x, v); };
    g.boundary_full = false;
    record_gauge_bounds(man, g);
    return g;
}

// corrected gauge: log phi~ = log phi - (tau_-/tau) log phi(flow-out), which
// vanishes on all of dSM; the correction is constant along each geodesic so
// D log phi~ = D log phi - log phi(flow-out)/tau.
inline Gauge modified_gauge(const Manifold& man, const PointFn& a, const PointFn& atilde,
                            double hs = -1.0) {
    const Manifold* mp = &man;
    PointFn diff = [a, atilde](const Vec& x, const Vec& v) { return atilde(x, v) - a(x, v); };
    // full-chord integral of (a~ - a): log phi at the flow-out point is -G
    auto chord = [mp, diff, hs](const Vec& x, const Vec& v) -> std::array<double, 3> {
        BoundaryHit in = mp->flow_in({x, v});
        double tau_p = mp->exit_time({x, v});
        double tau = in.time + tau_p;
        double G = flow_integral(*mp, diff, {in.x, in.v}, tau, hs);
        double Gm = flow_integral(*mp, diff, {in.x, in.v}, in.time, hs);
        return {G, Gm, tau};
    };
    Gauge g;
    g.log_phi = [mp, chord](const Vec& x, const Vec& v) {
        auto [G, Gm, tau] = chord(x, v);
        if (tau <= 0.0) throw solver_error("degenerate chord in gauge correction");
        double tau_m = mp->exit_time({x, -Vec(v)});
        return -Gm + (tau_m / tau) * G;
    };
    g.dlog_phi = [a, atilde, chord](const Vec& x, const Vec& v) {
        auto [G, Gm, tau] = chord(x, v);
        (void)Gm;
        return (a(x, v) - atilde(x, v)) + G / tau;
    };
    g.boundary_full = true;
    record_gauge_bounds(man, g);
    return g;
}

// ---- representative pair and class distance ------------------------------

// Phase-space tables of the corrected gauge (log phi~) and the per-geodesic
// constant c = -G/tau, with a' = a~ + c. Tabulating once keeps kernel norms
// affordable; evaluation interpolates in position and fiber coordinate.
class GaugeTable {
  public:
    GaugeTable(const Manifold& man, const CoefficientPair& cpa, const CoefficientPair& cpb,
               PhaseGrid grid, double hs = -1.0)
        : man_(&man), grid_(std::move(grid)) {
        AttenuationCoeff a = cpa.a, at = cpb.a;
        double Rs = std::max(cpa.support_radius, cpb.support_radius);
        PointFn diff = [a, at, Rs](const Vec& x, const Vec& v) {
            return norm(x) < Rs ? at(x, v) - a(x, v) : 0.0;
        };
        logphi_.assign(grid_.size(), 0.0);
        cgeo_.assign(grid_.size(), 0.0);
        const std::size_t nd = grid_.dirs.size();
        parallel_for(grid_.size(), [&](std::size_t i) {
            std::size_t ix = i / nd, j = i % nd;
            Vec x = grid_.node(ix);
            if (norm(x) >= man.r_outer()) return;
            Vec v = man.metric().fiber_dir(x, grid_.dirs.u[j]);
            BoundaryHit in = man.flow_in({x, v});
            double tau_p = man.exit_time({x, v});
            double tau = in.time + tau_p;
            double Gm = flow_integral(man, diff, {in.x, in.v}, in.time, hs);
            double G = Gm + flow_integral(man, diff, {x, v}, tau_p, hs);
            logphi_[i] = -Gm + (in.time / tau) * G;
            cgeo_[i] = -G / tau;
        });
    }

    double log_phi(const Vec& x, const Vec& v) const {
        return grid_.interp_full(logphi_, x, man_->metric().fiber_coord(x, v));
    }
    double correction(const Vec& x, const Vec& v) const {
        return grid_.interp_full(cgeo_, x, man_->metric().fiber_coord(x, v));
    }
    const PhaseGrid& grid() const { return grid_; }

  private:
    const Manifold* man_;
    PhaseGrid grid_;
    Field logphi_;
    Field cgeo_;
};

struct RepresentativePair {
    CoefficientPair pair;
    std::shared_ptr<GaugeTable> table;
};

// (a', k'): the gauge image of (a, k) under the corrected trial gauge built
// from the attenuation difference, so that a' is uniformly close to a~
// whenever the albedo operators are close.
inline RepresentativePair build_representative(const Manifold& man, const CoefficientPair& cpa,
                                               const CoefficientPair& cpb, PhaseGrid grid,
                                               double hs = -1.0) {
    RepresentativePair rp;
    rp.table = std::make_shared<GaugeTable>(man, cpa, cpb, std::move(grid), hs);
    std::shared_ptr<GaugeTable> tab = rp.table;
    AttenuationCoeff at = cpb.a;
    // the chordwise correction extends past the coefficient support
    rp.pair.support_radius = man.r_outer() + man.step();
    // a' = a - D log phi~ = a~ + c along each geodesic (analytic identity)
    rp.pair.a = {[at, tab](const Vec& x, const Vec& v) {
        return at(x, v) + tab->correction(x, v);
    }};
    if (!cpa.k.terms.empty()) {
        for (const auto& t : cpa.k.terms) {
            PointFn A = t.A, B = t.B;
            rp.pair.k.terms.push_back(
                {[A, tab](const Vec& x, const Vec& v) {
                     return A(x, v) * std::exp(tab->log_phi(x, v));
                 },
                 [B, tab](const Vec& x, const Vec& vp) {
                     return B(x, vp) * std::exp(-tab->log_phi(x, vp));
                 }});
        }
    }
    if (cpa.k.f) {
        ScatterFn kf = cpa.k.f;
        rp.pair.k.f = [kf, tab](const Vec& x, const Vec& v, const Vec& vp) {
            return kf(x, v, vp) * std::exp(tab->log_phi(x, v) - tab->log_phi(x, vp));
        };
    }
    return rp;
}

struct ClassDistanceReport {
    double a_diff_sup = 0.0;  // sup |a' - a~|
    double k_diff = 0.0;      // L1 (n3 mode) or sup (n2 mode) of k' - k~
    double delta_upper = 0.0;
    std::string mode;  // "n3" or "n2"
    int grid_x = 0;
    int grid_dir = 0;
};

// Upper bound on the equivalence-class distance via the constructed
// representative: Delta <= max(|a'-a~|_inf, |k'-k~|) with the mode-dependent
// kernel norm (L1(S^2M) for n>=3, sup for n=2).
inline ClassDistanceReport class_distance_upper(const Manifold& man, const CoefficientPair& cpa,
                                                const CoefficientPair& cpb, const std::string& mode,
                                                const PhaseGrid& grid, double hs = -1.0) {
    RepresentativePair rp = build_representative(man, cpa, cpb, grid, hs);
    ClassDistanceReport rep;
    rep.mode = mode;
    rep.grid_x = grid.n;
    rep.grid_dir = int(grid.dirs.size());
    const std::size_t nd = grid.dirs.size();
    const std::size_t nx = grid.nx();
    // the corrected pair differs from (a~, k~) on the whole domain, not just
    // inside the coefficient support
    double Rs = man.r_outer() * (1.0 - 1e-9);
    double cell = 1.0;
    for (int c = 0; c < grid.dim; ++c) cell *= grid.h();

    // separable kernels admit a per-position factor table, turning the
    // direction-pair loop into cheap dot products
    const bool fast = !rp.pair.k.f && !cpb.k.f;
    const std::size_t nra = rp.pair.k.terms.size(), nrb = cpb.k.terms.size();

    std::vector<double> asup(nx, 0.0), kacc(nx, 0.0);
    parallel_for(nx, [&](std::size_t ix) {
        Vec x = grid.node(ix);
        if (norm(x) >= Rs) return;
        std::vector<Vec> vs(nd);
        for (std::size_t j = 0; j < nd; ++j) vs[j] = man.metric().fiber_dir(x, grid.dirs.u[j]);
        double am = 0.0, kL1 = 0.0, ksup = 0.0;
        std::vector<double> Aa, Ba, Ab, Bb;
        if (fast) {
            Aa.resize(nra * nd);
            Ba.resize(nra * nd);
            Ab.resize(nrb * nd);
            Bb.resize(nrb * nd);
            bool in_a = norm(x) < rp.pair.support_radius;
            bool in_b = norm(x) < cpb.support_radius;
            for (std::size_t j = 0; j < nd; ++j) {
                for (std::size_t r = 0; r < nra; ++r) {
                    Aa[r * nd + j] = in_a ? rp.pair.k.terms[r].A(x, vs[j]) : 0.0;
                    Ba[r * nd + j] = in_a ? rp.pair.k.terms[r].B(x, vs[j]) : 0.0;
                }
                for (std::size_t r = 0; r < nrb; ++r) {
                    Ab[r * nd + j] = in_b ? cpb.k.terms[r].A(x, vs[j]) : 0.0;
                    Bb[r * nd + j] = in_b ? cpb.k.terms[r].B(x, vs[j]) : 0.0;
                }
            }
        }
        for (std::size_t i = 0; i < nd; ++i) {
            am = std::max(am, std::abs(rp.pair.eval_a(x, vs[i]) - cpb.eval_a(x, vs[i])));
            for (std::size_t j = 0; j < nd; ++j) {
                double dk;
                if (fast) {
                    dk = 0.0;
                    for (std::size_t r = 0; r < nra; ++r) dk += Aa[r * nd + i] * Ba[r * nd + j];
                    for (std::size_t r = 0; r < nrb; ++r) dk -= Ab[r * nd + i] * Bb[r * nd + j];
                } else {
                    dk = rp.pair.eval_k(x, vs[i], vs[j]) - cpb.eval_k(x, vs[i], vs[j]);
                }
                kL1 += std::abs(dk) * grid.dirs.w[i] * grid.dirs.w[j];
                ksup = std::max(ksup, std::abs(dk));
            }
        }
        asup[ix] = am;
        kacc[ix] = (mode == "n2") ? ksup : kL1 * man.metric().sqrt_det(x);
    });
    for (std::size_t ix = 0; ix < nx; ++ix) {
        rep.a_diff_sup = std::max(rep.a_diff_sup, asup[ix]);
        if (mode == "n2")
            rep.k_diff = std::max(rep.k_diff, kacc[ix]);
        else
            rep.k_diff += kacc[ix] * cell;
    }
    rep.delta_upper = std::max(rep.a_diff_sup, rep.k_diff);
    return rep;
}

}  // namespace geotransport
