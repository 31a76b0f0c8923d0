#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace dchb {

struct QuadratureConfig {
    double abs_tol = 1e-10;
    double rel_tol = 1e-8;
    int max_subdivisions = 60;
    // window expansion: integrate over mode +- k*sigma, growing k until the
    // added tail mass is negligible
    double initial_half_width = 8.0;
    double max_half_width = 60.0;

    void validate() const {
        if (abs_tol <= 0 || rel_tol <= 0)
            throw std::invalid_argument("quadrature tolerances must be positive");
    }
};

namespace detail {

template <class F>
double adaptive_simpson_rec(const F& f, double a, double b, double fa, double fm,
                            double fb, double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
    return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

template <class F>
double integrate(const F& f, double a, double b, double tol = 1e-10, int max_depth = 50) {
    if (!(a < b)) return 0.0;
    double m = 0.5 * (a + b);
    double fa = f(a), fm = f(m), fb = f(b);
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

// Maximize a unimodal function: bracket by step-doubling from x0, then
// golden-section.  No derivatives needed, robust for sharply peaked
// log-kernels.
template <class F>
double maximize_unimodal(const F& f, double x0, double step = 1.0,
                         double xtol = 1e-12) {
    double fl = f(x0 - step), fc = f(x0), fr = f(x0 + step);
    double a = x0 - step, b = x0 + step;
    int guard = 0;
    while (!(fc >= fl && fc >= fr)) {
        if (++guard > 400) throw std::runtime_error("mode bracketing failed");
        if (fr > fc) {
            a = x0; fl = fc;
            x0 = b; fc = fr;
            step *= 2.0;
            b = x0 + step; fr = f(b);
        } else {
            b = x0; fr = fc;
            x0 = a; fc = fl;
            step *= 2.0;
            a = x0 - step; fl = f(a);
        }
    }
    const double gr = 0.6180339887498948482;
    double x1 = b - gr * (b - a);
    double x2 = a + gr * (b - a);
    double f1 = f(x1), f2 = f(x2);
    double scale = 1.0 + std::abs(x0);
    while (b - a > xtol * scale) {
        if (f1 < f2) {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + gr * (b - a); f2 = f(x2);
        } else {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - gr * (b - a); f1 = f(x1);
        }
    }
    return 0.5 * (a + b);
}

// local curvature scale 1/sqrt(-L'') of a log-density at its mode, by
// central differences with step refinement
template <class F>
double curvature_scale(const F& logf, double mode) {
    double h = 1e-3 * (1.0 + std::abs(mode));
    for (int i = 0; i < 40; ++i) {
        double d2 = (logf(mode + h) - 2.0 * logf(mode) + logf(mode - h)) / (h * h);
        if (d2 < -1e-12) {
            double sigma = 1.0 / std::sqrt(-d2);
            // step should be small relative to the scale it measures
            if (h < 0.1 * sigma || i == 39) return sigma;
            h = std::max(1e-6 * sigma, 0.01 * sigma);
            d2 = (logf(mode + h) - 2.0 * logf(mode) + logf(mode - h)) / (h * h);
            return d2 < 0 ? 1.0 / std::sqrt(-d2) : sigma;
        }
        h *= 2.0;  // flat region, widen
    }
    return 1.0 + std::abs(mode);
}

// Ratio of integrals  int w(t) exp(logf(t)) dt / int exp(logf(t)) dt
// over an expanding window around the mode of logf, with max-subtraction.
// Both integrals share the window so the ratio is stable.
template <class W, class F>
double log_density_weighted_mean(const W& weight, const F& logf, double mode_guess,
                                 const QuadratureConfig& cfg = {}) {
    cfg.validate();
    double mode = maximize_unimodal(logf, mode_guess, 1.0);
    double sigma = curvature_scale(logf, mode);
    double lmax = logf(mode);

    auto den_f = [&](double t) { return std::exp(logf(t) - lmax); };
    auto num_f = [&](double t) { return weight(t) * std::exp(logf(t) - lmax); };

    double half = cfg.initial_half_width * sigma;
    double num = integrate(num_f, mode - half, mode + half, cfg.abs_tol, cfg.max_subdivisions);
    double den = integrate(den_f, mode - half, mode + half, cfg.abs_tol, cfg.max_subdivisions);

    while (half < cfg.max_half_width * sigma) {
        double new_half = 1.5 * half;
        double tail_num = integrate(num_f, mode - new_half, mode - half, cfg.abs_tol, cfg.max_subdivisions) +
                          integrate(num_f, mode + half, mode + new_half, cfg.abs_tol, cfg.max_subdivisions);
        double tail_den = integrate(den_f, mode - new_half, mode - half, cfg.abs_tol, cfg.max_subdivisions) +
                          integrate(den_f, mode + half, mode + new_half, cfg.abs_tol, cfg.max_subdivisions);
        num += tail_num;
        den += tail_den;
        half = new_half;
        if (std::abs(tail_den) < cfg.abs_tol + cfg.rel_tol * std::abs(den) &&
            std::abs(tail_num) < cfg.abs_tol + cfg.rel_tol * std::abs(num))
            break;
    }
    if (!(den > 0.0) || !std::isfinite(den))
        throw std::runtime_error("non-integrable kernel");
    return num / den;
}

// pairwise (cascade) summation; order-independent reduction for parallel
// fan-out contracts
inline double pairwise_sum(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    if (hi - lo <= 8) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += v[i];
        return s;
    }
    std::size_t mid = lo + (hi - lo) / 2;
    return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

inline double pairwise_sum(const std::vector<double>& v) {
    return pairwise_sum(v, 0, v.size());
}

}  // namespace dchb
