#pragma once

// Stationary transport on a simple manifold:
//   -D u - a u + integral of k(x, v, v') u(x, v') domega(v') = 0 in SM,
//   u = u_- on Gamma_-.
// Solved by the Neumann series u = sum_j K^j J u_- where J propagates the
// boundary value ballistically and K is one scattering step. Fields are
// tabulated on a Cartesian position grid covering the coefficient support,
// times a fixed fiber direction grid; positions interpolate multilinearly
// and the direction index is exact (fields are indexed by the euclidean
// fiber coordinate u, mapped pointwise through A(x) = L(x)^{-T}).

#include <cstring>

#include "coefficients.hpp"

namespace geotransport {

using BoundarySource = std::function<double(const Vec&, const Vec&)>;

struct PhaseGrid {
    int dim = 2;
    double half = 1.0;  // box [-half, half]^dim
    int n = 33;         // nodes per axis
    DirectionGrid dirs;

    double h() const { return 2.0 * half / (n - 1); }
    std::size_t nx() const {
        std::size_t m = 1;
        for (int i = 0; i < dim; ++i) m *= n;
        return m;
    }
    std::size_t size() const { return nx() * dirs.size(); }

    Vec node(std::size_t ix) const {
        Vec x{};
        std::size_t rest = ix;
        for (int c = dim - 1; c >= 0; --c) {
            x[c] = -half + h() * double(rest % n);
            rest /= n;
        }
        return x;
    }

    // multilinear interpolation of field slice j over positions
    double interp(const std::vector<double>& f, const Vec& x, std::size_t j) const {
        const std::size_t nd = dirs.size();
        double u[3] = {};
        int i0[3] = {};
        for (int c = 0; c < dim; ++c) {
            double s = (x[c] + half) / h();
            s = std::clamp(s, 0.0, double(n - 1) - 1e-12);
            i0[c] = static_cast<int>(s);
            u[c] = s - i0[c];
        }
        if (dim == 2) {
            std::size_t base = (std::size_t(i0[0]) * n + i0[1]) * nd + j;
            double f00 = f[base], f01 = f[base + nd];
            double f10 = f[base + std::size_t(n) * nd], f11 = f[base + (std::size_t(n) + 1) * nd];
            return (1 - u[0]) * ((1 - u[1]) * f00 + u[1] * f01) +
                   u[0] * ((1 - u[1]) * f10 + u[1] * f11);
        }
        std::size_t sz = nd, sy = std::size_t(n) * nd, sx = std::size_t(n) * n * nd;
        std::size_t base = std::size_t(i0[0]) * sx + std::size_t(i0[1]) * sy +
                           std::size_t(i0[2]) * sz + j;
        double acc = 0.0;
        for (int bx = 0; bx < 2; ++bx)
            for (int by = 0; by < 2; ++by)
                for (int bz = 0; bz < 2; ++bz) {
                    double w = (bx ? u[0] : 1 - u[0]) * (by ? u[1] : 1 - u[1]) *
                               (bz ? u[2] : 1 - u[2]);
                    acc += w * f[base + bx * sx + by * sy + bz * sz];
                }
        return acc;
    }

    // interpolation in position and direction (euclidean fiber coordinate)
    double interp_full(const std::vector<double>& f, const Vec& x, const Vec& uq) const {
        std::size_t idx[4];
        double wt[4];
        int m = dirs.stencil(uq, idx, wt);
        double acc = 0.0;
        for (int t = 0; t < m; ++t)
            if (wt[t] != 0.0) acc += wt[t] * interp(f, x, idx[t]);
        return acc;
    }
};

using Field = std::vector<double>;

inline double field_max(const Field& f) {
    double m = 0.0;
    for (double v : f) m = std::max(m, std::abs(v));
    return m;
}

// ---- attenuation integrals --------------------------------------------

// integral of a along the forward flow of p over [0, t1]
inline double attenuation_integral(const Manifold& man, const CoefficientPair& cp,
                                   const PhasePoint& p, double t1, double hs = -1.0) {
    if (t1 <= 0.0) return 0.0;
    double step = hs > 0.0 ? hs : man.step();
    std::size_t nseg = std::max<std::size_t>(2, std::size_t(std::ceil(t1 / step)));
    if (nseg % 2) ++nseg;
    double dt = t1 / double(nseg);
    std::vector<double> samples(nseg + 1);
    if (man.metric().is_euclidean()) {
        for (std::size_t i = 0; i <= nseg; ++i)
            samples[i] = cp.eval_a(p.x + (dt * double(i)) * p.v, p.v);
    } else {
        PhasePoint q = p;
        for (std::size_t i = 0; i <= nseg; ++i) {
            samples[i] = cp.eval_a(q.x, q.v);
            if (i < nseg) q = man.rk4_step(q, dt);
        }
    }
    return simpson(samples, dt);
}

// total attenuation E(x, y) = exp(-integral of a along the geodesic x -> y)
inline double attenuation_E(const Manifold& man, const CoefficientPair& cp, const Vec& x,
                            const Vec& y, double hs = -1.0) {
    ConnectResult c = man.connect(x, y);
    return std::exp(-attenuation_integral(man, cp, {x, c.direction}, c.distance, hs));
}

// broken-ray attenuation F(x', y, w) = E(x', y) * E(y, exit along w)
inline double broken_attenuation_F(const Manifold& man, const CoefficientPair& cp, const Vec& xp,
                                   const Vec& y, const Vec& w, double hs = -1.0) {
    double tplus = man.exit_time({y, w});
    double leg2 = attenuation_integral(man, cp, {y, w}, tplus, hs);
    return attenuation_E(man, cp, xp, y, hs) * std::exp(-leg2);
}

// ---- subcriticality ------------------------------------------------------

struct CriticalityReport {
    double cs_value = 0.0;   // sup over SM of the integrated scattering mass
    double cs_margin = 0.0;  // 1 - cs_value
    bool cs_ok = false;
    double dl_margin = 0.0;  // inf of a - fiber integral of k
    bool dl_ok = false;
};

inline CriticalityReport check_subcritical(const Manifold& man, const CoefficientPair& cp,
                                           const DirectionGrid& dirs, int n_x = 9) {
    CriticalityReport rep;
    double Rs = std::min(cp.support_radius, man.r_outer() * (1.0 - 1e-9));
    std::vector<Vec> xs;
    int d = man.dim();
    for (int i = 0; i < n_x; ++i)
        for (int j = 0; j < n_x; ++j)
            for (int l = 0; l < (d == 3 ? n_x : 1); ++l) {
                Vec x = d == 2 ? vec2(-Rs + 2 * Rs * i / (n_x - 1), -Rs + 2 * Rs * j / (n_x - 1))
                               : vec3(-Rs + 2 * Rs * i / (n_x - 1), -Rs + 2 * Rs * j / (n_x - 1),
                                      -Rs + 2 * Rs * l / (n_x - 1));
                if (norm(x) < Rs) xs.push_back(x);
            }
    double cs = 0.0, dl = std::numeric_limits<double>::infinity();
    for (const Vec& x : xs) {
        std::vector<Vec> vs(dirs.size());
        for (std::size_t j = 0; j < dirs.size(); ++j)
            vs[j] = man.metric().fiber_dir(x, dirs.u[j]);
        for (std::size_t i = 0; i < vs.size(); ++i) {
            // line-integrated scattering mass along the chord through (x, v)
            TauPair tp = man.travel_times({x, vs[i]});
            GeodesicPath path = man.resample({x, vs[i]}, tp, man.step() * 4.0);
            std::vector<double> mass(path.size());
            for (std::size_t s = 0; s < path.size(); ++s) {
                double l1 = 0.0;
                std::vector<Vec> vps(dirs.size());
                for (std::size_t j = 0; j < dirs.size(); ++j) {
                    Vec vp = man.metric().fiber_dir(path.x[s], dirs.u[j]);
                    l1 += std::abs(cp.eval_k(path.x[s], path.v[s], vp)) * dirs.w[j];
                }
                mass[s] = l1;
            }
            cs = std::max(cs, simpson(mass, path.step));
            double out = 0.0;
            for (std::size_t j = 0; j < vs.size(); ++j)
                out += cp.eval_k(x, vs[i], vs[j]) * dirs.w[j];
            dl = std::min(dl, cp.eval_a(x, vs[i]) - out);
        }
    }
    rep.cs_value = cs;
    rep.cs_margin = 1.0 - cs;
    rep.cs_ok = rep.cs_margin > 0.0;
    rep.dl_margin = xs.empty() ? 0.0 : dl;
    rep.dl_ok = rep.dl_margin >= 0.0;
    return rep;
}

// ---- solver -------------------------------------------------------------

struct SolverOptions {
    double line_step = -1.0;  // quadrature step for scattering line integrals
    int max_terms = 50;
    double tol = 1e-10;  // relative truncation of the Neumann series
};

struct SolveStats {
    int terms = 0;
    std::vector<double> ratios;  // successive term-norm ratios
    double tail_bound = 0.0;
    double residual = 0.0;  // relative fixed-point defect
    double max_abs = 0.0;
    double source_max = 0.0;
};

class TransportWorkspace {
  public:
    TransportWorkspace(const Manifold& man, const CoefficientPair& cp, PhaseGrid grid,
                       SolverOptions opts = {})
        : man_(&man), cp_(&cp), grid_(std::move(grid)), opts_(opts) {
        if (opts_.line_step <= 0.0) opts_.line_step = man.step();
        euclid_ = man.metric().is_euclidean();
        precompute();
    }

    const Manifold& manifold() const { return *man_; }
    const CoefficientPair& coefficients() const { return *cp_; }
    const PhaseGrid& grid() const { return grid_; }
    const SolverOptions& options() const { return opts_; }

    Field apply_J(const BoundarySource& src) const {
        Field f(grid_.size(), 0.0);
        parallel_for(grid_.size(), [&](std::size_t i) {
            const NodeInfo& nd = nodes_[i];
            if (nd.valid) f[i] = nd.E_entry * src(nd.entry_x, nd.entry_v);
        });
        return f;
    }

    Field apply_K(const Field& f) const {
        Field out(grid_.size(), 0.0);
        Moments mom = moments(f);
        parallel_for(grid_.size(), [&](std::size_t i) {
            const NodeInfo& nd = nodes_[i];
            if (nd.valid && nd.nsamp > 0) out[i] = ray_integral(i, f, mom);
        });
        return out;
    }

    // in-scattering T1 f at an arbitrary phase point (exact direction)
    double apply_T1(const Field& f, const Vec& x, const Vec& v) const {
        if (norm(x) >= cp_->support_radius) return 0.0;
        Moments mom = moments(f);
        return t1_at(f, mom, x, v);
    }

    Field solve(const BoundarySource& src, SolveStats* stats = nullptr) const {
        Field total = apply_J(src);
        double base = field_max(total);
        SolveStats st;
        st.source_max = boundary_source_max(src);
        Field term = total;
        double prev = base;
        for (int j = 0; j < opts_.max_terms; ++j) {
            term = apply_K(term);
            double tn = field_max(term);
            for (std::size_t i = 0; i < total.size(); ++i) total[i] += term[i];
            if (prev > 0.0) st.ratios.push_back(tn / prev);
            prev = tn;
            ++st.terms;
            if (tn <= opts_.tol * std::max(base, 1e-300)) break;
        }
        // geometric tail estimate from the last observed ratio
        double kappa = st.ratios.empty() ? 0.0 : st.ratios.back();
        st.tail_bound = (kappa < 1.0 && kappa > 0.0) ? prev * kappa / (1.0 - kappa) : prev;
        // fixed-point defect: u - (J u_- + K u)
        Field ju = apply_J(src);
        Field ku = apply_K(total);
        double defect = 0.0;
        for (std::size_t i = 0; i < total.size(); ++i)
            defect = std::max(defect, std::abs(ju[i] + ku[i] - total[i]));
        st.max_abs = field_max(total);
        st.residual = st.max_abs > 0.0 ? defect / st.max_abs : 0.0;
        if (stats) *stats = st;
        return total;
    }

    // full outgoing trace u(x, v) at a boundary phase point (x on any sphere
    // between the support and the domain boundary, v outgoing)
    double trace_exit(const Field& u, const BoundarySource& src, const PhasePoint& p) const {
        Moments mom = moments(u);
        return ballistic_trace(src, p) + scattered_trace_with(mom, u, p);
    }

    double ballistic_trace(const BoundarySource& src, const PhasePoint& p) const {
        BoundaryHit in = man_->flow_in(p);
        double ia = attenuation_integral(*man_, *cp_, {in.x, in.v}, in.time, opts_.line_step);
        return std::exp(-ia) * src(in.x, in.v);
    }

    double scattered_trace(const Field& u, const PhasePoint& p) const {
        Moments mom = moments(u);
        return scattered_trace_with(mom, u, p);
    }

    // scattered traces for many exit points sharing one moment table
    std::vector<double> scattered_traces(const Field& u,
                                         const std::vector<PhasePoint>& pts) const {
        Moments mom = moments(u);
        std::vector<double> out(pts.size(), 0.0);
        parallel_for(pts.size(),
                     [&](std::size_t i) { out[i] = scattered_trace_with(mom, u, pts[i]); });
        return out;
    }

  private:
    struct NodeInfo {
        bool valid = true;
        float E_entry = 0.0f;  // exp(-attenuation to the entry point)
        Vec entry_x{}, entry_v{};
        double t0 = 0.0, dt = 0.0;  // in-support window of the backward ray
        int nsamp = 0;              // odd (even Simpson interval count), 0 if none
        std::size_t offset = 0;     // into acum_ (and xv_ when stored)
        Vec x{}, v{};               // phase coordinates of the node
    };

    using Moments = std::vector<double>;  // separable: nx * nterms; else empty

    const Manifold* man_;
    const CoefficientPair* cp_;
    PhaseGrid grid_;
    SolverOptions opts_;
    bool euclid_ = false;
    std::vector<NodeInfo> nodes_;
    std::vector<float> acum_;  // cumulative backward attenuation per sample
    std::vector<float> xv_;    // packed (x, v) samples for curved metrics

    void precompute() {
        const std::size_t nn = grid_.size();
        const std::size_t nd = grid_.dirs.size();
        nodes_.resize(nn);
        std::vector<std::vector<float>> acc_a(nn), acc_xv(nn);
        parallel_for(nn, [&](std::size_t i) {
            std::size_t ix = i / nd, j = i % nd;
            NodeInfo& ni = nodes_[i];
            ni.x = grid_.node(ix);
            if (norm(ni.x) >= man_->r_outer()) {
                ni.valid = false;
                return;
            }
            ni.v = man_->metric().fiber_dir(ni.x, grid_.dirs.u[j]);
            build_node(ni, acc_a[i], acc_xv[i]);
        });
        std::size_t tot_a = 0, tot_xv = 0;
        for (std::size_t i = 0; i < nn; ++i) {
            nodes_[i].offset = tot_a;
            tot_a += acc_a[i].size();
            tot_xv += acc_xv[i].size();
        }
        acum_.reserve(tot_a);
        xv_.reserve(tot_xv);
        for (std::size_t i = 0; i < nn; ++i) {
            acum_.insert(acum_.end(), acc_a[i].begin(), acc_a[i].end());
            xv_.insert(xv_.end(), acc_xv[i].begin(), acc_xv[i].end());
        }
    }

    void build_node(NodeInfo& ni, std::vector<float>& acc_a, std::vector<float>& acc_xv) const {
        double tau_m = man_->exit_time({ni.x, -Vec(ni.v)});
        double hs = opts_.line_step;
        std::size_t nseg = std::max<std::size_t>(2, std::size_t(std::ceil(tau_m / hs)));
        if (nseg % 2) ++nseg;
        double dt = tau_m / double(nseg);
        double Rs = cp_->support_radius;
        // walk backward, accumulating the attenuation integral by trapezoid
        std::vector<double> acum(nseg + 1);
        std::vector<Vec> px(nseg + 1), pv(nseg + 1);
        PhasePoint q{ni.x, ni.v};
        double prev_a = cp_->eval_a(q.x, q.v), A = 0.0;
        px[0] = q.x;
        pv[0] = q.v;
        acum[0] = 0.0;
        for (std::size_t s = 1; s <= nseg; ++s) {
            if (euclid_)
                q.x = ni.x - (dt * double(s)) * ni.v;
            else
                q = man_->rk4_step(q, -dt);
            double av = cp_->eval_a(q.x, q.v);
            A += 0.5 * dt * (prev_a + av);
            prev_a = av;
            acum[s] = A;
            px[s] = q.x;
            pv[s] = q.v;
        }
        ni.entry_x = px[nseg];
        ni.entry_v = pv[nseg];
        ni.E_entry = float(std::exp(-acum[nseg]));
        // contiguous in-support window, padded to an even interval count
        std::size_t lo = nseg + 1, hi = 0;
        for (std::size_t s = 0; s <= nseg; ++s)
            if (norm(px[s]) < Rs) {
                lo = std::min(lo, s);
                hi = std::max(hi, s);
            }
        if (lo > hi) {
            ni.nsamp = 0;
            return;
        }
        if (lo > 0) --lo;
        if (hi < nseg) ++hi;
        if ((hi - lo) % 2) (hi < nseg) ? ++hi : --lo;
        ni.t0 = dt * double(lo);
        ni.dt = dt;
        ni.nsamp = int(hi - lo + 1);
        for (std::size_t s = lo; s <= hi; ++s) {
            acc_a.push_back(float(acum[s]));
            if (!euclid_) {
                for (int c = 0; c < grid_.dim; ++c) acc_xv.push_back(float(px[s][c]));
                for (int c = 0; c < grid_.dim; ++c) acc_xv.push_back(float(pv[s][c]));
            }
        }
    }

    Moments moments(const Field& f) const {
        const auto& terms = cp_->k.terms;
        if (terms.empty()) return {};
        const std::size_t nd = grid_.dirs.size(), nx = grid_.nx(), nr = terms.size();
        Moments mom(nx * nr, 0.0);
        parallel_for(nx, [&](std::size_t ix) {
            Vec x = grid_.node(ix);
            if (norm(x) >= cp_->support_radius) return;
            for (std::size_t j = 0; j < nd; ++j) {
                double fv = f[ix * nd + j];
                if (fv == 0.0) continue;
                Vec vp = man_->metric().fiber_dir(x, grid_.dirs.u[j]);
                double wf = grid_.dirs.w[j] * fv;
                for (std::size_t r = 0; r < nr; ++r) mom[ix * nr + r] += terms[r].B(x, vp) * wf;
            }
        });
        return mom;
    }

    double t1_at(const Field& f, const Moments& mom, const Vec& x, const Vec& v) const {
        const auto& terms = cp_->k.terms;
        const std::size_t nd = grid_.dirs.size();
        if (!terms.empty()) {
            double s = 0.0;
            for (std::size_t r = 0; r < terms.size(); ++r) {
                double m = interp_mom(mom, terms.size(), x, r);
                if (m != 0.0) s += terms[r].A(x, v) * m;
            }
            return s;
        }
        double s = 0.0;
        for (std::size_t j = 0; j < nd; ++j) {
            double fv = grid_.interp(f, x, j);
            if (fv == 0.0) continue;
            Vec vp = man_->metric().fiber_dir(x, grid_.dirs.u[j]);
            s += cp_->eval_k(x, v, vp) * fv * grid_.dirs.w[j];
        }
        return s;
    }

    double interp_mom(const Moments& mom, std::size_t nr, const Vec& x, std::size_t r) const {
        // same multilinear scheme as PhaseGrid::interp, over the moment table
        const int n = grid_.n;
        double u[3] = {};
        int i0[3] = {};
        for (int c = 0; c < grid_.dim; ++c) {
            double s = (x[c] + grid_.half) / grid_.h();
            s = std::clamp(s, 0.0, double(n - 1) - 1e-12);
            i0[c] = static_cast<int>(s);
            u[c] = s - i0[c];
        }
        if (grid_.dim == 2) {
            std::size_t base = (std::size_t(i0[0]) * n + i0[1]) * nr + r;
            return (1 - u[0]) * ((1 - u[1]) * mom[base] + u[1] * mom[base + nr]) +
                   u[0] * ((1 - u[1]) * mom[base + std::size_t(n) * nr] +
                           u[1] * mom[base + (std::size_t(n) + 1) * nr]);
        }
        std::size_t sz = nr, sy = std::size_t(n) * nr, sx = std::size_t(n) * n * nr;
        std::size_t base =
            std::size_t(i0[0]) * sx + std::size_t(i0[1]) * sy + std::size_t(i0[2]) * sz + r;
        double acc = 0.0;
        for (int bx = 0; bx < 2; ++bx)
            for (int by = 0; by < 2; ++by)
                for (int bz = 0; bz < 2; ++bz)
                    acc += (bx ? u[0] : 1 - u[0]) * (by ? u[1] : 1 - u[1]) *
                           (bz ? u[2] : 1 - u[2]) * mom[base + bx * sx + by * sy + bz * sz];
        return acc;
    }

    double ray_integral(std::size_t i, const Field& f, const Moments& mom) const {
        const NodeInfo& nd = nodes_[i];
        double sum = 0.0;
        const float* ap = acum_.data() + nd.offset;
        std::size_t xvoff = 0;
        if (!euclid_) {
            // xv_ offsets track acum_ offsets scaled by 2*dim
            xvoff = nd.offset * std::size_t(2 * grid_.dim);
        }
        for (int s = 0; s < nd.nsamp; ++s) {
            double w = (s == 0 || s == nd.nsamp - 1) ? 1.0 : (s % 2 ? 4.0 : 2.0);
            Vec xs, vs;
            if (euclid_) {
                xs = nd.x - (nd.t0 + nd.dt * s) * nd.v;
                vs = nd.v;
            } else {
                const float* p = xv_.data() + xvoff + std::size_t(s) * 2 * grid_.dim;
                xs = Vec{};
                vs = Vec{};
                for (int c = 0; c < grid_.dim; ++c) xs[c] = p[c];
                for (int c = 0; c < grid_.dim; ++c) vs[c] = p[grid_.dim + c];
            }
            double t1 = t1_at(f, mom, xs, vs);
            if (t1 != 0.0) sum += w * std::exp(-double(ap[s])) * t1;
        }
        return sum * nd.dt / 3.0;
    }

    double scattered_trace_with(const Moments& mom, const Field& f, const PhasePoint& p) const {
        // fresh backward integration from an arbitrary (boundary) phase point
        double tau_m = man_->exit_time({p.x, -Vec(p.v)});
        double hs = opts_.line_step;
        std::size_t nseg = std::max<std::size_t>(2, std::size_t(std::ceil(tau_m / hs)));
        if (nseg % 2) ++nseg;
        double dt = tau_m / double(nseg);
        double Rs = cp_->support_radius;
        PhasePoint q = p;
        double prev_a = cp_->eval_a(q.x, q.v), A = 0.0, sum = 0.0;
        for (std::size_t s = 0; s <= nseg; ++s) {
            if (s > 0) {
                if (euclid_)
                    q.x = p.x - (dt * double(s)) * p.v;
                else
                    q = man_->rk4_step(q, -dt);
                double av = cp_->eval_a(q.x, q.v);
                A += 0.5 * dt * (prev_a + av);
                prev_a = av;
            }
            if (norm(q.x) >= Rs) continue;
            double w = (s == 0 || s == nseg) ? 1.0 : (s % 2 ? 4.0 : 2.0);
            double t1 = t1_at(f, mom, q.x, q.v);
            if (t1 != 0.0) sum += w * std::exp(-A) * t1;
        }
        return sum * dt / 3.0;
    }

    double boundary_source_max(const BoundarySource& src) const {
        double m = 0.0;
        for (const auto& ni : nodes_)
            if (ni.valid) m = std::max(m, std::abs(src(ni.entry_x, ni.entry_v)));
        return m;
    }
};

inline Field solve_transport(const TransportWorkspace& ws, const BoundarySource& src,
                             SolveStats* stats = nullptr) {
    return ws.solve(src, stats);
}

}  // namespace geotransport
