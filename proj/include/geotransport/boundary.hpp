#pragma once

// Boundary charts and quadrature for the influx/outflux measure
// dmu = |<v, nu>_g| dSigma(x) domega(v).
//
// Incoming/outgoing directions at a boundary point are parameterized so the
// |<v, nu>| factor is absorbed into the parameters ("cosine-weighted"):
//   2D: v = sgn * sqrt(1 - s^2) nu + s e1,          dmu = ell(phi) dphi ds
//   3D: v = sgn * sqrt(1 - q) nu
//         + sqrt(q) (cos(pw) e1 + sin(pw) e2),      dmu = 1/2 sig(mu,beta) dmu dbeta dq dpw
// with (nu, e1[, e2]) a g-orthonormal frame and ell / sig the g-area density
// of the chart sphere in its position parameters. Midpoint quadrature on
// uniform parameter cells then integrates dmu exactly for constant
// integrands, and the density needed by normalized sources is just the
// position density.

#include "geometry.hpp"

namespace geotransport {

inline double wrap_angle(double a) {
    while (a <= -M_PI) a += 2.0 * M_PI;
    while (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

struct Frame {
    Vec nu;  // outward g-unit normal
    Vec e1;
    Vec e2;  // 3D only
};

// Chart of the sphere |x| = R inside a manifold's global chart.
class SphereChart {
  public:
    SphereChart(const Manifold& man, double R) : man_(&man), R_(R) {}

    const Manifold& manifold() const { return *man_; }
    double radius() const { return R_; }
    int dim() const { return man_->dim(); }

    // position from params: 2D (phi), 3D (mu = cos(polar), beta)
    Vec point(double p1, double p2 = 0.0) const {
        if (dim() == 2) return vec2(R_ * std::cos(p1), R_ * std::sin(p1));
        double rho = std::sqrt(std::max(0.0, 1.0 - p1 * p1));
        return vec3(R_ * rho * std::cos(p2), R_ * rho * std::sin(p2), R_ * p1);
    }

    std::array<double, 2> pos_params(const Vec& x) const {
        if (dim() == 2) return {std::atan2(x[1], x[0]), 0.0};
        return {std::clamp(x[2] / R_, -1.0, 1.0), std::atan2(x[1], x[0])};
    }

    Frame frame_at(const Vec& x) const {
        const Metric& g = man_->metric();
        Frame f;
        f.nu = boundary_normal(x);
        if (dim() == 2) {
            Vec t = vec2(-x[1], x[0]);
            t = t - g.inner(x, t, f.nu) * f.nu;
            f.e1 = g.normalize(x, t);
            return f;
        }
        auto [mu, beta] = std::pair<double, double>{x[2] / R_, std::atan2(x[1], x[0])};
        double rho = std::sqrt(std::max(1e-14, 1.0 - mu * mu));
        Vec t1 = vec3(-R_ * mu * std::cos(beta) / rho, -R_ * mu * std::sin(beta) / rho, R_);
        Vec t2 = vec3(-R_ * rho * std::sin(beta), R_ * rho * std::cos(beta), 0.0);
        t1 = t1 - g.inner(x, t1, f.nu) * f.nu;
        f.e1 = g.normalize(x, t1);
        Vec u = t2 - g.inner(x, t2, f.nu) * f.nu - g.inner(x, t2, f.e1) * f.e1;
        f.e2 = g.normalize(x, u);
        return f;
    }

    // g-area density of the sphere in the position parameters.
    double pos_density(double p1, double p2 = 0.0) const {
        const Metric& g = man_->metric();
        Vec x = point(p1, p2);
        if (dim() == 2) {
            Vec t = vec2(-x[1], x[0]);  // dx/dphi
            return g.g_norm(x, t);
        }
        double mu = p1, beta = p2;
        double rho = std::sqrt(std::max(1e-14, 1.0 - mu * mu));
        Vec t1 = vec3(-R_ * mu * std::cos(beta) / rho, -R_ * mu * std::sin(beta) / rho, R_);
        Vec t2 = vec3(-R_ * rho * std::sin(beta), R_ * rho * std::cos(beta), 0.0);
        double a = g.inner(x, t1, t1), b = g.inner(x, t1, t2), c = g.inner(x, t2, t2);
        return std::sqrt(std::max(0.0, a * c - b * b));
    }

    // direction from cosine-weighted params; sgn = -1 incoming, +1 outgoing
    Vec direction(const Frame& f, int sgn, double d1, double d2 = 0.0) const {
        if (dim() == 2) {
            double s = std::clamp(d1, -1.0, 1.0);
            double c = std::sqrt(std::max(0.0, 1.0 - s * s));
            return (sgn * c) * f.nu + s * f.e1;
        }
        double q = std::clamp(d1, 0.0, 1.0);
        double c = std::sqrt(1.0 - q), st = std::sqrt(q);
        return (sgn * c) * f.nu + (st * std::cos(d2)) * f.e1 + (st * std::sin(d2)) * f.e2;
    }

    struct ChartCoords {
        std::array<double, 4> p{};  // pos params then dir params
        int sgn = 0;
        double cosang = 0.0;  // |<v, nu>_g|
    };

    ChartCoords coords_of(const Vec& x, const Vec& v) const {
        const Metric& g = man_->metric();
        ChartCoords cc;
        auto pp = pos_params(x);
        cc.p[0] = pp[0];
        cc.p[1] = pp[1];
        Frame f = frame_at(x);
        double cn = g.inner(x, v, f.nu);
        cc.sgn = cn >= 0.0 ? +1 : -1;
        cc.cosang = std::abs(cn);
        if (dim() == 2) {
            cc.p[2] = g.inner(x, v, f.e1);
        } else {
            double a1 = g.inner(x, v, f.e1), a2 = g.inner(x, v, f.e2);
            cc.p[2] = std::min(1.0, a1 * a1 + a2 * a2);
            cc.p[3] = std::atan2(a2, a1);
        }
        return cc;
    }

  private:
    const Manifold* man_;
    double R_;

    Vec boundary_normal(const Vec& x) const {
        // same construction as Manifold::outward_normal but for radius R_
        const Metric& g = man_->metric();
        Vec nhat = (1.0 / norm(x)) * x;
        if (g.is_euclidean()) return nhat;
        if (g.kind() == MetricKind::Conformal) return (1.0 / g.conformal_factor(x)) * nhat;
        Mat3 gram = g.gram(x);
        Vec w{};
        // solve G w = nhat by Cramer-free elimination via normalize of G^{-1} nhat
        double M[3][4];
        int n = dim();
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) M[i][j] = gram[i][j];
            M[i][n] = nhat[i];
        }
        for (int col = 0; col < n; ++col) {
            int piv = col;
            for (int r = col + 1; r < n; ++r)
                if (std::abs(M[r][col]) > std::abs(M[piv][col])) piv = r;
            std::swap(M[piv], M[col]);
            for (int r = 0; r < n; ++r) {
                if (r == col) continue;
                double fpiv = M[r][col] / M[col][col];
                for (int cc = col; cc <= n; ++cc) M[r][cc] -= fpiv * M[col][cc];
            }
        }
        for (int i = 0; i < n; ++i) w[i] = M[i][n] / M[i][i];
        return g.normalize(x, w);
    }
};

// Quadrature node of a Gamma_- or Gamma_+ grid.
struct GammaNode {
    Vec x;
    Vec v;
    double weight = 0.0;  // dmu cell mass
    double cosang = 0.0;  // |<v, nu>_g|
    int ipos = 0;
    int idir = 0;
    std::array<double, 4> prm{};  // param-cell midpoints
};

struct GammaGridSpec {
    int n_pos1 = 128;  // 2D: phi cells; 3D: mu cells
    int n_pos2 = 1;    // 3D: beta cells
    int n_dir1 = 64;   // 2D: s cells; 3D: q cells
    int n_dir2 = 1;    // 3D: pw cells
};

class GammaGrid {
  public:
    GammaGrid(const Manifold& man, double R, int sgn, const GammaGridSpec& spec)
        : chart_(man, R), sgn_(sgn), spec_(spec) {
        int d = man.dim();
        if (d == 2) {
            dp_[0] = 2.0 * M_PI / spec.n_pos1;
            dp_[2] = 2.0 / spec.n_dir1;
            for (int i = 0; i < spec.n_pos1; ++i) {
                double phi = -M_PI + dp_[0] * (i + 0.5);
                Vec x = chart_.point(phi);
                Frame f = chart_.frame_at(x);
                double pw = chart_.pos_density(phi) * dp_[0];
                for (int j = 0; j < spec.n_dir1; ++j) {
                    double s = -1.0 + dp_[2] * (j + 0.5);
                    GammaNode nd;
                    nd.x = x;
                    nd.v = chart_.direction(f, sgn, s);
                    nd.cosang = std::sqrt(std::max(0.0, 1.0 - s * s));
                    nd.weight = pw * dp_[2];
                    nd.ipos = i;
                    nd.idir = j;
                    nd.prm = {phi, 0.0, s, 0.0};
                    nodes_.push_back(nd);
                }
            }
        } else {
            dp_[0] = 2.0 / spec.n_pos1;
            dp_[1] = 2.0 * M_PI / spec.n_pos2;
            dp_[2] = 1.0 / spec.n_dir1;
            dp_[3] = 2.0 * M_PI / spec.n_dir2;
            int ip = 0;
            for (int i = 0; i < spec.n_pos1; ++i) {
                double mu = -1.0 + dp_[0] * (i + 0.5);
                for (int i2 = 0; i2 < spec.n_pos2; ++i2, ++ip) {
                    double beta = -M_PI + dp_[1] * (i2 + 0.5);
                    Vec x = chart_.point(mu, beta);
                    Frame f = chart_.frame_at(x);
                    double pw = chart_.pos_density(mu, beta) * dp_[0] * dp_[1];
                    int id = 0;
                    for (int j = 0; j < spec.n_dir1; ++j) {
                        double q = dp_[2] * (j + 0.5);
                        for (int j2 = 0; j2 < spec.n_dir2; ++j2, ++id) {
                            double pwang = -M_PI + dp_[3] * (j2 + 0.5);
                            GammaNode nd;
                            nd.x = x;
                            nd.v = chart_.direction(f, sgn, q, pwang);
                            nd.cosang = std::sqrt(1.0 - q);
                            nd.weight = pw * 0.5 * dp_[2] * dp_[3];
                            nd.ipos = ip;
                            nd.idir = id;
                            nd.prm = {mu, beta, q, pwang};
                            nodes_.push_back(nd);
                        }
                    }
                }
            }
        }
    }

    const SphereChart& chart() const { return chart_; }
    int sign() const { return sgn_; }
    const GammaGridSpec& spec() const { return spec_; }
    const std::vector<GammaNode>& nodes() const { return nodes_; }
    int positions() const {
        return chart_.dim() == 2 ? spec_.n_pos1 : spec_.n_pos1 * spec_.n_pos2;
    }
    int directions() const {
        return chart_.dim() == 2 ? spec_.n_dir1 : spec_.n_dir1 * spec_.n_dir2;
    }
    const std::array<double, 4>& cell_sizes() const { return dp_; }

    double total_measure() const {
        double s = 0.0;
        for (const auto& nd : nodes_) s += nd.weight;
        return s;
    }

    // dmu density with respect to the chart parameters at given params
    // (position density; the |cos| factor is absorbed by the direction
    // parameterization, with the extra 1/2 in 3D).
    double param_density(const std::array<double, 4>& prm) const {
        double d = chart_.pos_density(prm[0], prm[1]);
        return chart_.dim() == 2 ? d : 0.5 * d;
    }

  private:
    SphereChart chart_;
    int sgn_;
    GammaGridSpec spec_;
    std::vector<GammaNode> nodes_;
    std::array<double, 4> dp_{};
};

// Direction grid on the fiber: euclidean unit vectors u with weights summing
// to |S^{n-1}|; v = A(x) u maps them to g-unit directions with the fiber
// measure pulled back to the standard one.
struct DirectionGrid {
    int dim = 2;
    int n1 = 0, n2 = 1;  // 2D: n1 angles; 3D: n1 polar (cos theta) x n2 azimuth
    std::vector<Vec> u;
    std::vector<double> w;
    std::vector<double> par1;  // 2D: angle per node index; 3D: cos(theta) ladder (size n1)
    std::vector<double> par2;  // 3D: azimuth ladder (size n2)

    static DirectionGrid make(int dim, int n1, int n2 = 0) {
        DirectionGrid g;
        g.dim = dim;
        g.n1 = n1;
        if (dim == 2) {
            double dw = 2.0 * M_PI / n1;
            for (int i = 0; i < n1; ++i) {
                double a = -M_PI + dw * (i + 0.5);
                g.u.push_back(vec2(std::cos(a), std::sin(a)));
                g.w.push_back(dw);
                g.par1.push_back(a);
            }
            return g;
        }
        g.n2 = n2;
        std::vector<double> gx, gw;
        gauss_legendre(n1, gx, gw);  // nodes in (-1, 1) for cos(theta)
        double dphi = 2.0 * M_PI / n2;
        g.par1 = gx;
        for (int j = 0; j < n2; ++j) g.par2.push_back(-M_PI + dphi * (j + 0.5));
        for (int i = 0; i < n1; ++i) {
            double ct = gx[i], st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
            for (int j = 0; j < n2; ++j) {
                g.u.push_back(vec3(st * std::cos(g.par2[j]), st * std::sin(g.par2[j]), ct));
                g.w.push_back(gw[i] * dphi);
            }
        }
        return g;
    }

    std::size_t size() const { return u.size(); }

    // Interpolation stencil (indices + weights) for an arbitrary euclidean
    // unit direction: periodic linear in the angle(s), clamped linear in
    // cos(theta) for 3D. Writes up to 4 (index, weight) pairs.
    int stencil(const Vec& uq, std::size_t* idx, double* wt) const {
        if (dim == 2) {
            double a = std::atan2(uq[1], uq[0]);
            double da = 2.0 * M_PI / n1;
            double s = (a - par1[0]) / da;
            double fl = std::floor(s);
            double fr = s - fl;
            long i0 = (long(fl) % n1 + n1) % n1;
            long i1 = (i0 + 1) % n1;
            idx[0] = std::size_t(i0);
            wt[0] = 1.0 - fr;
            idx[1] = std::size_t(i1);
            wt[1] = fr;
            return 2;
        }
        double ct = std::clamp(uq[2], -1.0, 1.0);
        double ph = std::atan2(uq[1], uq[0]);
        // bracket ct in the (sorted) Gauss ladder, clamping at the ends
        int i0 = 0;
        while (i0 + 1 < n1 && par1[i0 + 1] < ct) ++i0;
        int i1 = std::min(i0 + 1, n1 - 1);
        double tw = (i1 == i0) ? 0.0
                               : std::clamp((ct - par1[i0]) / (par1[i1] - par1[i0]), 0.0, 1.0);
        double dphi = 2.0 * M_PI / n2;
        double s = (ph - par2[0]) / dphi;
        double fl = std::floor(s);
        double fr = s - fl;
        long j0 = (long(fl) % n2 + n2) % n2;
        long j1 = (j0 + 1) % n2;
        idx[0] = std::size_t(i0) * n2 + j0;
        wt[0] = (1.0 - tw) * (1.0 - fr);
        idx[1] = std::size_t(i0) * n2 + j1;
        wt[1] = (1.0 - tw) * fr;
        idx[2] = std::size_t(i1) * n2 + j0;
        wt[2] = tw * (1.0 - fr);
        idx[3] = std::size_t(i1) * n2 + j1;
        wt[3] = tw * fr;
        return 4;
    }
};

// Liouville-measure preservation: push a beam cell basis through the geodesic
// flow to its first crossing of the sphere |x| = r_mid and compare the dmu
// density against the pulled-back one. Reported defects are relative.
struct MeasureInvarianceReport {
    double max_defect = 0.0;
    double mean_defect = 0.0;
    int samples = 0;
};

inline MeasureInvarianceReport measure_invariance_check(const Manifold& man, double r_mid,
                                                        int n_samples = 32,
                                                        double fd_step = -1.0) {
    const int d = man.dim();
    double delta = fd_step > 0.0 ? fd_step : man.step();
    SphereChart src(man, man.r_outer());
    SphereChart img(man, r_mid);

    // first inward crossing of |x| = r_mid; nullopt if the geodesic misses
    auto cross_mid = [&](const PhasePoint& p) -> std::optional<PhasePoint> {
        double r2 = r_mid * r_mid;
        PhasePoint q = p;
        long cap = static_cast<long>(100.0 * (2.0 * man.r_outer() / man.step())) + 10;
        for (long i = 0; i < cap; ++i) {
            PhasePoint nq = man.rk4_step(q, man.step());
            if (dot(nq.x, nq.x) <= r2) {
                double lo = 0.0, hi = man.step();
                PhasePoint mid = nq;
                for (int it = 0; it < 80; ++it) {
                    double s = 0.5 * (lo + hi);
                    mid = man.rk4_step(q, s);
                    double r = norm(mid.x) - r_mid;
                    if (std::abs(r) <= 1e-12) break;
                    (r > 0.0 ? lo : hi) = s;
                }
                return mid;
            }
            if (dot(nq.x, nq.x) >= man.r_outer() * man.r_outer() && i > 2) return std::nullopt;
            q = nq;
        }
        return std::nullopt;
    };

    const int m = d == 2 ? 2 : 4;  // chart dimension of the phase boundary
    auto phase_from = [&](const std::array<double, 4>& prm) {
        Vec x = src.point(prm[0], prm[1]);
        Frame f = src.frame_at(x);
        Vec v = src.direction(f, -1, prm[2], prm[3]);
        return PhasePoint{x, v};
    };
    auto image_params = [&](const std::array<double, 4>& prm) -> std::optional<std::array<double, 4>> {
        auto hit = cross_mid(phase_from(prm));
        if (!hit) return std::nullopt;
        auto cc = img.coords_of(hit->x, hit->v);
        return cc.p;
    };

    MeasureInvarianceReport rep;
    double sum = 0.0;
    std::vector<Vec> xs = man.sphere_points(man.r_outer(), n_samples);
    for (const Vec& xsamp : xs) {
        auto pp = src.pos_params(xsamp);
        std::array<double, 4> prm{pp[0], pp[1], 0.0, 0.0};
        // mildly oblique incoming direction so the geodesic reaches r_mid
        prm[2] = d == 2 ? 0.35 : 0.2;
        prm[3] = 0.7;
        auto base = image_params(prm);
        if (!base) continue;
        // live chart parameter slots: 2D uses (pos angle, dir component)
        const int slot2[2] = {0, 2};
        auto slot = [&](int i) { return d == 2 ? slot2[i] : i; };
        double J[4][4] = {};
        bool ok = true;
        for (int c = 0; c < m && ok; ++c) {
            auto pp_ = prm, pm_ = prm;
            pp_[slot(c)] += delta;
            pm_[slot(c)] -= delta;
            auto ip = image_params(pp_);
            auto im = image_params(pm_);
            if (!ip || !im) { ok = false; break; }
            for (int r = 0; r < m; ++r) {
                double diff = (*ip)[slot(r)] - (*im)[slot(r)];
                bool angular = (d == 2) ? (r == 0) : (r == 1 || r == 3);
                if (angular) diff = wrap_angle(diff);
                J[r][c] = diff / (2.0 * delta);
            }
        }
        if (!ok) continue;
        double det;
        if (m == 2) {
            det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
        } else {
            // 4x4 determinant by elimination
            double A[4][4];
            for (int r = 0; r < 4; ++r)
                for (int c = 0; c < 4; ++c) A[r][c] = J[r][c];
            det = 1.0;
            for (int col = 0; col < 4; ++col) {
                int piv = col;
                for (int r = col + 1; r < 4; ++r)
                    if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
                if (piv != col) {
                    std::swap(A[piv], A[col]);
                    det = -det;
                }
                if (std::abs(A[col][col]) < 1e-300) { det = 0.0; break; }
                det *= A[col][col];
                for (int r = col + 1; r < 4; ++r) {
                    double f = A[r][col] / A[col][col];
                    for (int c = col; c < 4; ++c) A[r][c] -= f * A[col][c];
                }
            }
        }
        double rho_src = src.pos_density(prm[0], prm[1]) * (d == 2 ? 1.0 : 0.5);
        double rho_img = img.pos_density((*base)[0], (*base)[1]) * (d == 2 ? 1.0 : 0.5);
        double defect = std::abs(rho_src - rho_img * std::abs(det)) / rho_src;
        rep.max_defect = std::max(rep.max_defect, defect);
        sum += defect;
        ++rep.samples;
    }
    rep.mean_defect = rep.samples ? sum / rep.samples : 0.0;
    return rep;
}

}  // namespace geotransport
