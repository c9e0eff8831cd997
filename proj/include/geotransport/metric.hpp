#pragma once

#include "common.hpp"
#include "expr.hpp"

namespace geotransport {

enum class MetricKind { Euclidean, Conformal, General };

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 identity3() {
    Mat3 m{};
    m[0][0] = m[1][1] = m[2][2] = 1.0;
    return m;
}

// Riemannian metric on the global chart. Conformal and general kinds carry
// analytic first-derivative callbacks; finite differences are used only as a
// validation oracle in the tests.
class Metric {
  public:
    static Metric euclidean(int dim) {
        Metric m;
        m.dim_ = dim;
        m.kind_ = MetricKind::Euclidean;
        return m;
    }

    static Metric conformal(int dim, std::function<double(const Vec&)> c,
                            std::function<Vec(const Vec&)> grad_c) {
        Metric m;
        m.dim_ = dim;
        m.kind_ = MetricKind::Conformal;
        m.c_ = std::move(c);
        m.grad_c_ = std::move(grad_c);
        return m;
    }

    static Metric conformal_expr(int dim, const FieldExpr& c_expr) {
        std::array<FieldExpr, 3> grads;
        for (int i = 0; i < dim; ++i) grads[i] = c_expr.d_x(i);
        return conformal(
            dim, [c_expr](const Vec& x) { return c_expr.eval(x); },
            [grads, dim](const Vec& x) {
                Vec g{};
                for (int i = 0; i < dim; ++i) g[i] = grads[i].eval(x);
                return g;
            });
    }

    static Metric general(int dim, std::function<Mat3(const Vec&)> g,
                          std::function<Mat3(const Vec&, int)> dg) {
        Metric m;
        m.dim_ = dim;
        m.kind_ = MetricKind::General;
        m.g_ = std::move(g);
        m.dg_ = std::move(dg);
        return m;
    }

    int dim() const { return dim_; }
    MetricKind kind() const { return kind_; }
    bool is_euclidean() const { return kind_ == MetricKind::Euclidean; }

    double conformal_factor(const Vec& x) const {
        return kind_ == MetricKind::Conformal ? c_(x) : 1.0;
    }

    Mat3 gram(const Vec& x) const {
        switch (kind_) {
            case MetricKind::Euclidean: return identity3();
            case MetricKind::Conformal: {
                double c2 = c_(x);
                c2 *= c2;
                Mat3 g{};
                for (int i = 0; i < 3; ++i) g[i][i] = c2;
                return g;
            }
            case MetricKind::General: {
                Mat3 g = g_(x);
                g[2][2] = (dim_ == 2) ? 1.0 : g[2][2];
                return g;
            }
        }
        return identity3();
    }

    // d(g_ij)/d(x_l)
    Mat3 gram_deriv(const Vec& x, int l) const {
        switch (kind_) {
            case MetricKind::Euclidean: return Mat3{};
            case MetricKind::Conformal: {
                double c = c_(x);
                Vec gc = grad_c_(x);
                Mat3 d{};
                for (int i = 0; i < 3; ++i) d[i][i] = 2.0 * c * gc[l];
                return d;
            }
            case MetricKind::General: return dg_(x, l);
        }
        return Mat3{};
    }

    double inner(const Vec& x, const Vec& u, const Vec& w) const {
        if (kind_ == MetricKind::Euclidean) return dot(u, w);
        if (kind_ == MetricKind::Conformal) {
            double c = c_(x);
            return c * c * dot(u, w);
        }
        Mat3 g = gram(x);
        double s = 0.0;
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j) s += g[i][j] * u[i] * w[j];
        return s;
    }

    double g_norm(const Vec& x, const Vec& u) const { return std::sqrt(inner(x, u, u)); }

    // Rescale a chart vector to unit g-length.
    Vec normalize(const Vec& x, const Vec& u) const {
        double n = g_norm(x, u);
        if (n <= 0.0) throw geometry_error("cannot normalize a zero vector");
        return (1.0 / n) * u;
    }

    double sqrt_det(const Vec& x) const {
        if (kind_ == MetricKind::Euclidean) return 1.0;
        if (kind_ == MetricKind::Conformal) return std::pow(c_(x), dim_);
        Mat3 g = gram(x);
        if (dim_ == 2) return std::sqrt(g[0][0] * g[1][1] - g[0][1] * g[1][0]);
        return std::sqrt(det3(g));
    }

    // Linear g-isometry from the euclidean unit sphere onto S_xM: maps a
    // euclidean-unit u to a g-unit chart vector, preserving g-angles, so the
    // fiber measure d omega pulls back to the standard sphere measure.
    Vec fiber_dir(const Vec& x, const Vec& u) const {
        if (kind_ == MetricKind::Euclidean) return u;
        if (kind_ == MetricKind::Conformal) return (1.0 / c_(x)) * u;
        Mat3 L = cholesky(gram(x), dim_);
        // solve L^T v = u
        Vec v{};
        for (int i = dim_ - 1; i >= 0; --i) {
            double s = u[i];
            for (int j = i + 1; j < dim_; ++j) s -= L[j][i] * v[j];
            v[i] = s / L[i][i];
        }
        return v;
    }

    // inverse of fiber_dir: u = L(x)^T v, a euclidean-unit fiber coordinate
    Vec fiber_coord(const Vec& x, const Vec& v) const {
        if (kind_ == MetricKind::Euclidean) return v;
        if (kind_ == MetricKind::Conformal) return c_(x) * v;
        Mat3 L = cholesky(gram(x), dim_);
        Vec u{};
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j <= i; ++j) u[j] += L[i][j] * v[i];
        return u;
    }

    // Christoffel symbols of the second kind at x: out[k][i][j].
    void christoffel(const Vec& x, double out[3][3][3]) const {
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) out[k][i][j] = 0.0;
        if (kind_ == MetricKind::Euclidean) return;
        if (kind_ == MetricKind::Conformal) {
            double c = c_(x);
            if (c <= 0.0) throw geometry_error("conformal factor not positive");
            Vec gc = grad_c_(x);
            for (int k = 0; k < dim_; ++k)
                for (int i = 0; i < dim_; ++i)
                    for (int j = 0; j < dim_; ++j) {
                        double v = 0.0;
                        if (k == i) v += gc[j];
                        if (k == j) v += gc[i];
                        if (i == j) v -= gc[k];
                        out[k][i][j] = v / c;
                    }
            return;
        }
        Mat3 g = gram(x);
        Mat3 ginv = invert(g, dim_);
        std::array<Mat3, 3> dg;
        for (int l = 0; l < dim_; ++l) dg[l] = gram_deriv(x, l);
        for (int k = 0; k < dim_; ++k)
            for (int i = 0; i < dim_; ++i)
                for (int j = 0; j < dim_; ++j) {
                    double s = 0.0;
                    for (int l = 0; l < dim_; ++l)
                        s += ginv[k][l] * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                    out[k][i][j] = 0.5 * s;
                }
    }

    bool positive_definite_at(const Vec& x) const {
        Mat3 g = gram(x);
        if (g[0][0] <= 0.0) return false;
        double d2 = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if (d2 <= 0.0) return false;
        if (dim_ == 3 && det3(g) <= 0.0) return false;
        return true;
    }

  private:
    int dim_ = 2;
    MetricKind kind_ = MetricKind::Euclidean;
    std::function<double(const Vec&)> c_;
    std::function<Vec(const Vec&)> grad_c_;
    std::function<Mat3(const Vec&)> g_;
    std::function<Mat3(const Vec&, int)> dg_;

    static double det3(const Mat3& g) {
        return g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
               g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
               g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
    }

    static Mat3 cholesky(const Mat3& g, int n) {
        Mat3 L{};
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = g[i][j];
                for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
                if (i == j) {
                    if (s <= 0.0) throw geometry_error("metric not positive-definite");
                    L[i][j] = std::sqrt(s);
                } else {
                    L[i][j] = s / L[j][j];
                }
            }
        }
        return L;
    }

    static Mat3 invert(const Mat3& g, int n) {
        Mat3 inv{};
        if (n == 2) {
            double d = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            if (d == 0.0) throw geometry_error("singular metric");
            inv[0][0] = g[1][1] / d;
            inv[1][1] = g[0][0] / d;
            inv[0][1] = -g[0][1] / d;
            inv[1][0] = -g[1][0] / d;
            inv[2][2] = 1.0;
            return inv;
        }
        double d = det3(g);
        if (d == 0.0) throw geometry_error("singular metric");
        inv[0][0] = (g[1][1] * g[2][2] - g[1][2] * g[2][1]) / d;
        inv[0][1] = (g[0][2] * g[2][1] - g[0][1] * g[2][2]) / d;
        inv[0][2] = (g[0][1] * g[1][2] - g[0][2] * g[1][1]) / d;
        inv[1][0] = (g[1][2] * g[2][0] - g[1][0] * g[2][2]) / d;
        inv[1][1] = (g[0][0] * g[2][2] - g[0][2] * g[2][0]) / d;
        inv[1][2] = (g[0][2] * g[1][0] - g[0][0] * g[1][2]) / d;
        inv[2][0] = (g[1][0] * g[2][1] - g[1][1] * g[2][0]) / d;
        inv[2][1] = (g[0][1] * g[2][0] - g[0][0] * g[2][1]) / d;
        inv[2][2] = (g[0][0] * g[1][1] - g[0][1] * g[1][0]) / d;
        return inv;
    }
};

}  // namespace geotransport
