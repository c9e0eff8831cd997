#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace geotransport {

// Chart vectors. The chart dimension is 2 or 3 at runtime; the third
// component is kept at zero in 2D.
using Vec = std::array<double, 3>;

inline Vec vec2(double x, double y) { return {x, y, 0.0}; }
inline Vec vec3(double x, double y, double z) { return {x, y, z}; }

inline Vec operator+(const Vec& a, const Vec& b) {
    return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec operator-(const Vec& a, const Vec& b) {
    return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec operator*(double s, const Vec& a) {
    return {s * a[0], s * a[1], s * a[2]};
}
inline Vec operator-(const Vec& a) { return {-a[0], -a[1], -a[2]}; }

inline double dot(const Vec& a, const Vec& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }
inline double dist(const Vec& a, const Vec& b) { return norm(a - b); }

struct geometry_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct solver_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Worker count: GEOTRANSPORT_THREADS caps it, default is the hardware count.
inline unsigned worker_count() {
    if (const char* env = std::getenv("GEOTRANSPORT_THREADS")) {
        long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1u : hc;
}

// Plain blocked parallel map over [0, n); pure work functions only.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    unsigned nw = worker_count();
    if (nw <= 1 || n < 2 * nw) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nw);
    std::size_t chunk = (n + nw - 1) / nw;
    for (unsigned w = 0; w < nw; ++w) {
        std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

// Composite Simpson over equally spaced samples; falls back to a trapezoid
// correction on the last interval when the sample count is even.
inline double simpson(const std::vector<double>& f, double h) {
    std::size_t n = f.size();
    if (n == 0) return 0.0;
    if (n == 1) return 0.0;
    if (n == 2) return 0.5 * h * (f[0] + f[1]);
    double s = 0.0;
    std::size_t m = (n % 2 == 1) ? n : n - 1;
    for (std::size_t i = 0; i + 2 < m + 1; i += 2)
        s += h / 3.0 * (f[i] + 4.0 * f[i + 1] + f[i + 2]);
    if (n % 2 == 0) s += 0.5 * h * (f[n - 2] + f[n - 1]);
    return s;
}

// Gauss-Legendre nodes/weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
            }
            double dp = n * (t * p0 - p1) / (t * t - 1.0);
            double dt = p0 / dp;
            t -= dt;
            if (std::abs(dt) < 1e-15) break;
        }
        double p0 = 1.0, p1 = 0.0;
        for (int j = 0; j < n; ++j) {
            double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
        }
        double dp = n * (t * p0 - p1) / (t * t - 1.0);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
}

// Volume of the unit ball in R^m (omega_{n-1} in the stability constants).
inline double unit_ball_volume(int m) {
    if (m == 0) return 1.0;
    if (m == 1) return 2.0;
    if (m == 2) return M_PI;
    if (m == 3) return 4.0 * M_PI / 3.0;
    return std::pow(M_PI, 0.5 * m) / std::tgamma(0.5 * m + 1.0);
}

}  // namespace geotransport
