#pragma once

// Attenuation a(x, v) and scattering k(x, v, v') coefficient pairs. Both are
// supported in the closed inner ball; scattering kernels carry an optional
// separable decomposition k = sum_r A_r(x, v) B_r(x, v') that the transport
// solver exploits for fast direction integrals.

#include <functional>

#include "boundary.hpp"
#include "expr.hpp"

namespace geotransport {

using PointFn = std::function<double(const Vec&, const Vec&)>;            // (x, v)
using ScatterFn = std::function<double(const Vec&, const Vec&, const Vec&)>;  // (x, v, v')

// C^2 radial cutoff: 1 at r = 0, 0 for r >= rs.
inline double support_cutoff(double r, double rs) {
    double q = 1.0 - (r / rs) * (r / rs);
    return q > 0.0 ? q * q * q : 0.0;
}

struct SeparableTerm {
    PointFn A;  // factor in (x, v)
    PointFn B;  // factor in (x, v')
};

struct AttenuationCoeff {
    PointFn f;
    double operator()(const Vec& x, const Vec& v) const { return f(x, v); }
};

struct ScatterCoeff {
    ScatterFn f;
    std::vector<SeparableTerm> terms;  // empty => general (slow) kernel

    bool separable() const { return !terms.empty(); }
    double operator()(const Vec& x, const Vec& v, const Vec& vp) const {
        if (f) return f(x, v, vp);
        double s = 0.0;
        for (const auto& t : terms) s += t.A(x, v) * t.B(x, vp);
        return s;
    }
};

// admissibility bounds: |a| <= Sigma, sup integral of |k| over the fiber
// <= Sigma, |k| <= rho pointwise
struct BoundsProfile {
    double sigma = 0.0;
    double rho = 0.0;
    double a_sup = 0.0;
    double k_sup = 0.0;
    double k_int_sup = 0.0;  // sup_x,v of the fiber L1 norm of k
};

struct CoefficientPair {
    AttenuationCoeff a;
    ScatterCoeff k;
    double support_radius = 0.0;  // coefficients vanish for |x| >= this

    double eval_a(const Vec& x, const Vec& v) const {
        return norm(x) < support_radius ? a(x, v) : 0.0;
    }
    double eval_k(const Vec& x, const Vec& v, const Vec& vp) const {
        return norm(x) < support_radius ? k(x, v, vp) : 0.0;
    }
};

// Grid-measured coefficient bounds (supremum over chart grid x fiber grid).
inline BoundsProfile measure_bounds(const Manifold& man, const CoefficientPair& cp,
                                    const DirectionGrid& dirs, int n_x = 13) {
    BoundsProfile b;
    int d = man.dim();
    double R = std::min(cp.support_radius, man.r_outer() * (1.0 - 1e-9));
    std::vector<Vec> xs;
    for (int i = 0; i < n_x; ++i)
        for (int j = 0; j < n_x; ++j) {
            if (d == 2) {
                Vec x = vec2(-R + 2.0 * R * i / (n_x - 1), -R + 2.0 * R * j / (n_x - 1));
                if (norm(x) < R) xs.push_back(x);
            } else {
                for (int l = 0; l < n_x; ++l) {
                    Vec x = vec3(-R + 2.0 * R * i / (n_x - 1), -R + 2.0 * R * j / (n_x - 1),
                                 -R + 2.0 * R * l / (n_x - 1));
                    if (norm(x) < R) xs.push_back(x);
                }
            }
        }
    for (const Vec& x : xs) {
        std::vector<Vec> vs(dirs.size());
        for (std::size_t i = 0; i < dirs.size(); ++i)
            vs[i] = man.metric().fiber_dir(x, dirs.u[i]);
        for (std::size_t i = 0; i < vs.size(); ++i) {
            b.a_sup = std::max(b.a_sup, std::abs(cp.eval_a(x, vs[i])));
            double l1 = 0.0;
            for (std::size_t j = 0; j < vs.size(); ++j) {
                double kv = cp.eval_k(x, vs[i], vs[j]);
                b.k_sup = std::max(b.k_sup, std::abs(kv));
                l1 += std::abs(kv) * dirs.w[j];
            }
            b.k_int_sup = std::max(b.k_int_sup, l1);
        }
    }
    b.sigma = std::max(b.a_sup, b.k_int_sup);
    b.rho = b.k_sup;
    return b;
}

// ---- built-in families ----------------------------------------------------

// isotropic gaussian bump with compact support
inline AttenuationCoeff gaussian_attenuation(double amp, Vec center, double width, double rs) {
    return {[=](const Vec& x, const Vec&) {
        Vec d = x - center;
        return amp * std::exp(-dot(d, d) / (width * width)) * support_cutoff(norm(x), rs);
    }};
}

// direction-modulated attenuation: sigma(x) (1 + beta <v, e>)
inline AttenuationCoeff modulated_attenuation(double amp, Vec center, double width, double rs,
                                              double beta, Vec axis) {
    Vec e = (1.0 / norm(axis)) * axis;
    return {[=](const Vec& x, const Vec& v) {
        Vec d = x - center;
        return amp * std::exp(-dot(d, d) / (width * width)) * (1.0 + beta * dot(v, e)) *
               support_cutoff(norm(x), rs);
    }};
}

// scattering with linear ("cosine") anisotropy, kept separable:
//   k(x, v, v') = s(x) / |S^{n-1}| * (1 + aniso * v.v')
inline ScatterCoeff cosine_scattering(double amp, Vec center, double width, double rs,
                                      double aniso, int dim) {
    double sphere = (dim == 2) ? 2.0 * M_PI : 4.0 * M_PI;
    auto s = [=](const Vec& x) {
        Vec d = x - center;
        return amp * std::exp(-dot(d, d) / (width * width)) * support_cutoff(norm(x), rs);
    };
    ScatterCoeff k;
    k.terms.push_back({[=](const Vec& x, const Vec&) { return s(x) / sphere; },
                       [](const Vec&, const Vec&) { return 1.0; }});
    if (aniso != 0.0) {
        for (int c = 0; c < dim; ++c) {
            k.terms.push_back({[=](const Vec& x, const Vec& v) { return aniso * s(x) / sphere * v[c]; },
                               [c](const Vec&, const Vec& vp) { return vp[c]; }});
        }
    }
    return k;
}

// expression-backed coefficients; the compact-support cutoff is applied on
// top of whatever the expression evaluates to
inline AttenuationCoeff expr_attenuation(const std::string& src, int dim, double rs) {
    FieldExpr e = parse_field_expr(src, FieldRole::Attenuation, dim);
    return {[e = std::move(e), rs](const Vec& x, const Vec& v) {
        return e.eval(x, v, Vec{}) * support_cutoff(norm(x), rs);
    }};
}

inline ScatterCoeff expr_scattering(const std::string& src, int dim, double rs) {
    FieldExpr e = parse_field_expr(src, FieldRole::Scattering, dim);
    ScatterCoeff k;
    k.f = [e = std::move(e), rs](const Vec& x, const Vec& v, const Vec& vp) {
        return e.eval(x, v, vp) * support_cutoff(norm(x), rs);
    };
    return k;
}

}  // namespace geotransport
