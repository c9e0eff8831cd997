#pragma once

// Simple Riemannian manifolds in a single global chart. The measurement
// domain is the chart ball |x| < r_outer; coefficients live in the inner
// ball |x| < r_inner, so every travel time through the outer domain is
// bounded away from zero.

#include <algorithm>
#include <limits>
#include <optional>

#include "metric.hpp"

namespace geotransport {

struct PhasePoint {
    Vec x;
    Vec v;  // unit length in g at x
};

struct TauPair {
    double minus = 0.0;  // backward travel time to the boundary
    double plus = 0.0;   // forward travel time
    double total() const { return minus + plus; }
};

// Geodesic sampled at uniform parameter spacing (unit g-speed, so the
// parameter is arc length). t = 0 is the launch point; samples run from
// -tau_minus to +tau_plus with an even interval count for Simpson rules.
struct GeodesicPath {
    std::vector<double> t;
    std::vector<Vec> x;
    std::vector<Vec> v;
    double tau_minus = 0.0;
    double tau_plus = 0.0;
    double step = 0.0;

    std::size_t size() const { return t.size(); }

    // Index of the sample at t = -tau_minus + i*step closest to s.
    PhasePoint at(double s) const {
        double u = (s - t.front()) / step;
        std::size_t i = static_cast<std::size_t>(std::clamp(u, 0.0, double(t.size() - 1)) + 0.5);
        return {x[i], v[i]};
    }
};

struct BoundaryHit {
    Vec x;
    Vec v;
    double time;  // travel time from the launch point
};

struct ConnectResult {
    Vec direction;  // unit in g at the source
    double distance;
};

struct DiamC0Estimate {
    double diam = 0.0;        // max geodesic distance over inner-boundary pairs
    double c0 = 0.0;          // min total travel time over the inner phase grid
    int boundary_samples = 0;
    int direction_samples = 0;
};

class Manifold {
  public:
    Manifold(Metric metric, double r_inner, double r_outer, double step = -1.0)
        : metric_(std::move(metric)), r_inner_(r_inner), r_outer_(r_outer) {
        if (!(r_outer_ > r_inner_) || r_inner_ <= 0.0)
            throw geometry_error("need 0 < R_M < R_M0 (strict containment)");
        step_ = (step > 0.0) ? step : 0.01 * r_outer_;
    }

    const Metric& metric() const { return metric_; }
    int dim() const { return metric_.dim(); }
    double r_inner() const { return r_inner_; }
    double r_outer() const { return r_outer_; }
    double step() const { return step_; }

    bool inside(const Vec& x) const { return norm(x) < r_outer_; }

    // Outward unit normal (in g) of the chart sphere |x| = r at x.
    Vec outward_normal(const Vec& x) const {
        Vec nhat = (1.0 / norm(x)) * x;
        if (metric_.is_euclidean()) return nhat;
        if (metric_.kind() == MetricKind::Conformal)
            return (1.0 / metric_.conformal_factor(x)) * nhat;
        // general: nu ~ G^{-1} nhat, normalized in g
        Mat3 g = metric_.gram(x);
        Mat3 ginv = invert_sym(g, dim());
        Vec w{};
        for (int i = 0; i < dim(); ++i)
            for (int j = 0; j < dim(); ++j) w[i] += ginv[i][j] * nhat[j];
        return metric_.normalize(x, w);
    }

    // ---- geodesic flow -------------------------------------------------

    // One RK4 step of the geodesic equation, with g-renormalization of v.
    PhasePoint rk4_step(const PhasePoint& p, double h) const {
        if (metric_.is_euclidean()) return {p.x + h * p.v, p.v};
        auto deriv = [this](const PhasePoint& q, Vec& dx, Vec& dv) {
            double gamma[3][3][3];
            metric_.christoffel(q.x, gamma);
            dx = q.v;
            dv = Vec{};
            for (int k = 0; k < dim(); ++k) {
                double s = 0.0;
                for (int i = 0; i < dim(); ++i)
                    for (int j = 0; j < dim(); ++j) s += gamma[k][i][j] * q.v[i] * q.v[j];
                dv[k] = -s;
            }
        };
        Vec k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v;
        deriv(p, k1x, k1v);
        deriv({p.x + (0.5 * h) * k1x, p.v + (0.5 * h) * k1v}, k2x, k2v);
        deriv({p.x + (0.5 * h) * k2x, p.v + (0.5 * h) * k2v}, k3x, k3v);
        deriv({p.x + h * k3x, p.v + h * k3v}, k4x, k4v);
        PhasePoint out;
        out.x = p.x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        out.v = p.v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        out.v = metric_.normalize(out.x, out.v);
        return out;
    }

    // Flow for signed time t without boundary stopping (the metric is known
    // on the full chart).
    PhasePoint flow(const PhasePoint& p, double t) const {
        if (metric_.is_euclidean()) return {p.x + t * p.v, p.v};
        if (t == 0.0) return p;
        double h = (t > 0.0) ? step_ : -step_;
        long n = static_cast<long>(std::floor(std::abs(t) / step_));
        PhasePoint q = p;
        for (long i = 0; i < n; ++i) q = rk4_step(q, h);
        double rem = t - n * h;
        if (std::abs(rem) > 1e-15) q = rk4_step(q, rem);
        return q;
    }

    // Forward exit time from (x, v) to |x| = r_outer; bisection-refined.
    double exit_time(const PhasePoint& p) const {
        if (metric_.is_euclidean()) return euclid_exit(p.x, p.v);
        double r2 = r_outer_ * r_outer_;
        PhasePoint q = p;
        double t = 0.0;
        long cap = static_cast<long>(100.0 * (2.0 * r_outer_ / step_)) + 10;
        for (long i = 0; i < cap; ++i) {
            PhasePoint nq = rk4_step(q, step_);
            if (dot(nq.x, nq.x) >= r2) {
                // bisect the step fraction until the crossing residual is tiny
                double lo = 0.0, hi = step_;
                PhasePoint mid = nq;
                for (int it = 0; it < 80; ++it) {
                    double s = 0.5 * (lo + hi);
                    mid = rk4_step(q, s);
                    double r = norm(mid.x) - r_outer_;
                    if (std::abs(r) <= 1e-12) { hi = s; break; }
                    (r < 0.0 ? lo : hi) = s;
                }
                return t + hi;
            }
            q = nq;
            t += step_;
        }
        throw geometry_error("geodesic did not exit the domain (simplicity violation?)");
    }

    TauPair travel_times(const PhasePoint& p) const {
        if (metric_.is_euclidean()) {
            double b = dot(p.x, p.v);
            double disc = b * b + r_outer_ * r_outer_ - dot(p.x, p.x);
            if (disc < 0.0) throw geometry_error("phase point outside the domain");
            double s = std::sqrt(disc);
            return {s + b, s - b};
        }
        TauPair tp;
        tp.plus = exit_time(p);
        tp.minus = exit_time({p.x, -p.v});
        return tp;
    }

    BoundaryHit flow_out(const PhasePoint& p) const {
        if (metric_.is_euclidean()) {
            double t = euclid_exit(p.x, p.v);
            return {p.x + t * p.v, p.v, t};
        }
        double t = exit_time(p);
        PhasePoint q = flow(p, t);
        return {q.x, q.v, t};
    }

    BoundaryHit flow_in(const PhasePoint& p) const {
        BoundaryHit h = flow_out({p.x, -p.v});
        return {h.x, -h.v, h.time};
    }

    // Uniformly resampled geodesic through p covering the whole chord.
    GeodesicPath geodesic(const PhasePoint& p, double sample_step = -1.0) const {
        TauPair tp = travel_times(p);
        return resample(p, tp, sample_step > 0.0 ? sample_step : step_);
    }

    GeodesicPath resample(const PhasePoint& p, const TauPair& tp, double hs) const {
        GeodesicPath path;
        double total = tp.total();
        std::size_t n = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(total / hs)));
        if (n % 2 == 1) ++n;  // even interval count for Simpson
        double dt = total / double(n);
        path.step = dt;
        path.tau_minus = tp.minus;
        path.tau_plus = tp.plus;
        path.t.resize(n + 1);
        path.x.resize(n + 1);
        path.v.resize(n + 1);
        if (metric_.is_euclidean()) {
            for (std::size_t i = 0; i <= n; ++i) {
                double t = -tp.minus + dt * double(i);
                path.t[i] = t;
                path.x[i] = p.x + t * p.v;
                path.v[i] = p.v;
            }
            return path;
        }
        PhasePoint entry = flow(p, -tp.minus);
        PhasePoint q = entry;
        for (std::size_t i = 0; i <= n; ++i) {
            path.t[i] = -tp.minus + dt * double(i);
            path.x[i] = q.x;
            path.v[i] = q.v;
            if (i < n) q = rk4_step(q, dt);
        }
        return path;
    }

    // ---- two-point problem ---------------------------------------------

    // Unit direction (in g) at x of the geodesic from x to y, and its length.
    ConnectResult connect(const Vec& x, const Vec& y, double tol = 1e-10) const {
        Vec d = y - x;
        double edist = norm(d);
        if (edist == 0.0) throw geometry_error("connect: coincident points");
        if (metric_.is_euclidean()) return {(1.0 / edist) * d, edist};

        Vec v0 = metric_.normalize(x, d);
        double L0 = approx_length(x, y);
        auto attempt = [&](const Vec& vstart) -> std::optional<ConnectResult> {
            return shoot_newton(x, y, vstart, L0, tol);
        };
        if (auto r = attempt(v0)) return *r;
        // multi-start fallback: 8 rotations of the initial direction
        for (int k = 1; k < 8; ++k) {
            double ang = 2.0 * M_PI * k / 8.0;
            Vec w;
            if (dim() == 2) {
                w = {std::cos(ang) * v0[0] - std::sin(ang) * v0[1],
                     std::sin(ang) * v0[0] + std::cos(ang) * v0[1], 0.0};
            } else {
                Vec axis = (k % 2 == 0) ? vec3(0, 0, 1) : vec3(0, 1, 0);
                w = rotate_about(v0, axis, ang);
            }
            if (auto r = attempt(metric_.normalize(x, w))) return *r;
        }
        throw geometry_error("connect: Newton shooting failed (possible non-simplicity)");
    }

    // Geodesic distance restricted to the closed inner ball; conservative
    // grid estimates of diam(M) and c_0.
    DiamC0Estimate estimate_diam_and_c0(int n_boundary = 48, int n_dir = 32) const {
        DiamC0Estimate est;
        est.boundary_samples = n_boundary;
        est.direction_samples = n_dir;
        std::vector<Vec> pts = sphere_points(r_inner_, n_boundary);
        double diam = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j)
                diam = std::max(diam, connect(pts[i], pts[j]).distance);
        est.diam = diam;

        double c0 = std::numeric_limits<double>::infinity();
        std::vector<Vec> dirs = sphere_points(1.0, n_dir);
        // tangential launches from the inner boundary realize the infimum for
        // ball-like domains; include interior samples as well
        std::vector<Vec> xs = pts;
        int n_int = std::max(2, n_boundary / 8);
        for (int i = 0; i < n_int; ++i)
            xs.push_back((double(i) / double(n_int)) * pts[i % pts.size()]);
        for (const Vec& x : xs)
            for (const Vec& u : dirs) {
                Vec v = metric_.fiber_dir(x, u);
                c0 = std::min(c0, travel_times({x, v}).total());
            }
        est.c0 = c0;
        return est;
    }

    // ---- simplicity diagnostics ----------------------------------------

    struct SimplicityReport {
        bool non_trapping = true;
        bool convex_boundary = true;
        bool no_conjugate_points = true;
        bool curvature_bound_2d = true;  // diam(M) < pi/sqrt(kappa) when kappa > 0
        double max_curvature = 0.0;
        bool ok() const { return non_trapping && convex_boundary && no_conjugate_points; }
    };

    SimplicityReport simplicity_diagnostics(int n_samples = 16) const {
        SimplicityReport rep;
        std::vector<Vec> pts = sphere_points(r_outer_ * (1.0 - 1e-9), n_samples);
        std::vector<Vec> dirs = sphere_points(1.0, n_samples);
        for (const Vec& x : pts) {
            Vec nu = outward_normal(x);
            for (const Vec& u : dirs) {
                Vec v = metric_.fiber_dir(x, u);
                double c = metric_.inner(x, v, nu);
                if (std::abs(c) < 0.05) {
                    // strict convexity: a tangential geodesic stays outside
                    // the domain, never dipping into the interior
                    PhasePoint q = rk4_step({x, v - metric_.inner(x, v, nu) * nu}, 4.0 * step_);
                    if (norm(q.x) < r_outer_ * (1.0 - 1e-6)) rep.convex_boundary = false;
                }
                if (c >= 0.0) continue;
                try {
                    exit_time({x, v});
                } catch (const geometry_error&) {
                    rep.non_trapping = false;
                }
                if (!conjugate_free(x, v)) rep.no_conjugate_points = false;
            }
        }
        if (dim() == 2 && metric_.kind() == MetricKind::Conformal) {
            // K = -Laplacian(log c)/c^2, sampled on an interior grid
            double kmax = 0.0;
            double h = 1e-4;
            for (const Vec& x : sphere_points(0.5 * r_inner_, 16)) {
                double lap = 0.0;
                double lc0 = std::log(metric_.conformal_factor(x));
                for (int i = 0; i < 2; ++i) {
                    Vec xp = x, xm = x;
                    xp[i] += h;
                    xm[i] -= h;
                    lap += (std::log(metric_.conformal_factor(xp)) - 2.0 * lc0 +
                            std::log(metric_.conformal_factor(xm))) /
                           (h * h);
                }
                double c = metric_.conformal_factor(x);
                kmax = std::max(kmax, -lap / (c * c));
            }
            rep.max_curvature = kmax;
            if (kmax > 0.0) {
                double diam = estimate_diam_and_c0(24, 16).diam;
                rep.curvature_bound_2d = diam < M_PI / std::sqrt(kmax);
            }
        }
        return rep;
    }

    // Evenly spread points on the chart sphere of radius r.
    std::vector<Vec> sphere_points(double r, int n) const {
        std::vector<Vec> out;
        if (dim() == 2) {
            for (int i = 0; i < n; ++i) {
                double a = 2.0 * M_PI * (i + 0.5) / n;
                out.push_back(vec2(r * std::cos(a), r * std::sin(a)));
            }
            return out;
        }
        // Fibonacci sphere
        double golden = M_PI * (3.0 - std::sqrt(5.0));
        for (int i = 0; i < n; ++i) {
            double z = 1.0 - 2.0 * (i + 0.5) / n;
            double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
            double a = golden * i;
            out.push_back(vec3(r * rad * std::cos(a), r * rad * std::sin(a), r * z));
        }
        return out;
    }

  private:
    Metric metric_;
    double r_inner_, r_outer_, step_;

    double euclid_exit(const Vec& x, const Vec& v) const {
        double b = dot(x, v);
        double disc = b * b + r_outer_ * r_outer_ - dot(x, x);
        if (disc < 0.0) throw geometry_error("phase point outside the domain");
        return std::sqrt(disc) - b;
    }

    double approx_length(const Vec& x, const Vec& y) const {
        // chart chord length scaled by the conformal factor midway
        double e = dist(x, y);
        Vec mid = 0.5 * (x + y);
        if (metric_.kind() == MetricKind::Conformal) return e * metric_.conformal_factor(mid);
        if (metric_.kind() == MetricKind::General)
            return e * metric_.g_norm(mid, (1.0 / e) * (y - x));
        return e;
    }

    std::optional<ConnectResult> shoot_newton(const Vec& x, const Vec& y, Vec v, double L,
                                              double tol) const {
        int m = dim();  // unknowns: m-1 direction params + length
        for (int iter = 0; iter < 60; ++iter) {
            std::array<Vec, 3> basis = transverse_basis(x, v);
            Vec r = flow({x, v}, L).x - y;
            double rn = norm(r);
            if (rn <= tol) return ConnectResult{v, L};
            // finite-difference Jacobian in (s_1[, s_2], L)
            double fd = std::max(1e-6, 1e-7 * L);
            double J[3][3] = {};
            for (int c = 0; c < m - 1; ++c) {
                Vec vp = metric_.normalize(x, v + fd * basis[c]);
                Vec rp = flow({x, vp}, L).x - y;
                for (int rrow = 0; rrow < m; ++rrow) J[rrow][c] = (rp[rrow] - r[rrow]) / fd;
            }
            {
                Vec rp = flow({x, v}, L + fd).x - y;
                for (int rrow = 0; rrow < m; ++rrow) J[rrow][m - 1] = (rp[rrow] - r[rrow]) / fd;
            }
            double delta[3] = {};
            if (!solve_small(J, r, delta, m)) return std::nullopt;
            double scale = 1.0;
            double dn = std::sqrt(delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]);
            if (dn > 0.5 * std::max(1.0, L)) scale = 0.5 * std::max(1.0, L) / dn;
            Vec dv{};
            for (int c = 0; c < m - 1; ++c) dv = dv + (-scale * delta[c]) * basis[c];
            v = metric_.normalize(x, v + dv);
            L = std::max(1e-6, L - scale * delta[m - 1]);
        }
        return std::nullopt;
    }

    std::array<Vec, 3> transverse_basis(const Vec& x, const Vec& v) const {
        std::array<Vec, 3> b{};
        if (dim() == 2) {
            b[0] = metric_.normalize(x, vec2(-v[1], v[0]));
            return b;
        }
        Vec ref = std::abs(v[0]) < 0.9 ? vec3(1, 0, 0) : vec3(0, 1, 0);
        Vec e1 = ref - (metric_.inner(x, ref, v) / metric_.inner(x, v, v)) * v;
        e1 = metric_.normalize(x, e1);
        Vec e2 = cross(v, e1);
        e2 = e2 - (metric_.inner(x, e2, v)) * v - (metric_.inner(x, e2, e1)) * e1;
        b[0] = e1;
        b[1] = metric_.normalize(x, e2);
        return b;
    }

    static Vec cross(const Vec& a, const Vec& b) {
        return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
    }

    static Vec rotate_about(const Vec& v, const Vec& axis, double ang) {
        Vec k = (1.0 / norm(axis)) * axis;
        Vec kxv = cross(k, v);
        double kdv = dot(k, v);
        return std::cos(ang) * v + std::sin(ang) * kxv + (kdv * (1.0 - std::cos(ang))) * k;
    }

    static bool solve_small(double A[3][3], const Vec& b, double* out, int n) {
        double M[3][4];
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) M[i][j] = A[i][j];
            M[i][n] = b[i];
        }
        for (int col = 0; col < n; ++col) {
            int piv = col;
            for (int r = col + 1; r < n; ++r)
                if (std::abs(M[r][col]) > std::abs(M[piv][col])) piv = r;
            if (std::abs(M[piv][col]) < 1e-14) return false;
            std::swap(M[piv], M[col]);
            for (int r = 0; r < n; ++r) {
                if (r == col) continue;
                double f = M[r][col] / M[col][col];
                for (int cc = col; cc <= n; ++cc) M[r][cc] -= f * M[col][cc];
            }
        }
        for (int i = 0; i < n; ++i) out[i] = M[i][n] / M[i][i];
        return true;
    }

    static Mat3 invert_sym(const Mat3& g, int n) {
        Mat3 inv{};
        if (n == 2) {
            double d = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            inv[0][0] = g[1][1] / d;
            inv[1][1] = g[0][0] / d;
            inv[0][1] = inv[1][0] = -g[0][1] / d;
            inv[2][2] = 1.0;
            return inv;
        }
        double d = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
                   g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
                   g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
        inv[0][0] = (g[1][1] * g[2][2] - g[1][2] * g[2][1]) / d;
        inv[0][1] = (g[0][2] * g[2][1] - g[0][1] * g[2][2]) / d;
        inv[0][2] = (g[0][1] * g[1][2] - g[0][2] * g[1][1]) / d;
        inv[1][0] = inv[0][1];
        inv[1][1] = (g[0][0] * g[2][2] - g[0][2] * g[2][0]) / d;
        inv[1][2] = (g[0][2] * g[1][0] - g[0][0] * g[1][2]) / d;
        inv[2][0] = inv[0][2];
        inv[2][1] = inv[1][2];
        inv[2][2] = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / d;
        return inv;
    }

    bool conjugate_free(const Vec& x, const Vec& v) const {
        if (metric_.is_euclidean()) return true;
        // track the transverse separation of two nearby geodesics; a
        // conjugate point would collapse it after initial growth
        double d0 = 1e-5;
        std::array<Vec, 3> basis = transverse_basis(x, v);
        Vec v2 = metric_.normalize(x, v + d0 * basis[0]);
        PhasePoint a{x, v}, b{x, v2};
        double grown = 0.0;
        long cap = static_cast<long>(10.0 * (2.0 * r_outer_ / step_)) + 10;
        for (long i = 0; i < cap; ++i) {
            a = rk4_step(a, step_);
            b = rk4_step(b, step_);
            double sep = dist(a.x, b.x);
            grown = std::max(grown, sep);
            if (sep < 0.05 * grown && grown > 10.0 * d0) return false;
            if (dot(a.x, a.x) >= r_outer_ * r_outer_) break;
        }
        return true;
    }
};

// Standalone Christoffel accessor matching the operation contract.
inline void christoffel(const Metric& metric, const Vec& x, double out[3][3][3]) {
    if (!metric.positive_definite_at(x)) throw geometry_error("metric not positive-definite at x");
    metric.christoffel(x, out);
}

}  // namespace geotransport
