#pragma once

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dchb/quadrature.hpp"
#include "dchb/stratified.hpp"

namespace dchb {

struct VarianceComponents {
    double mu_hat = 0;
    double sigma_v2 = 0;  // truncated at 0, flagged by boundary
    double sigma_e2 = 0;
    bool converged = false;
    bool boundary = false;
    int iterations = 0;

    void validate() const {
        if (!(sigma_e2 > 0) || sigma_v2 < 0)
            throw std::invalid_argument("invalid variance components");
    }
};

namespace detail {

struct RemlData {
    std::vector<int> ni;
    std::vector<double> ybar;
    double sse = 0;
    int n_total = 0;
};

inline RemlData reml_data(const StratifiedSample& s) {
    RemlData d;
    for (int i = 0; i < s.m(); ++i) {
        d.ni.push_back(s.n(i));
        d.ybar.push_back(s.ybar(i));
        d.sse += s.rss(i);
        d.n_total += s.n(i);
    }
    return d;
}

inline double profiled_mu(const RemlData& d, double sv2, double se2) {
    double sw = 0, swy = 0;
    for (std::size_t i = 0; i < d.ni.size(); ++i) {
        double w = d.ni[i] / (se2 + d.ni[i] * sv2);
        sw += w;
        swy += w * d.ybar[i];
    }
    return swy / sw;
}

// -2 * restricted log-likelihood of the one-way random-effects model with
// mu profiled out (constants dropped)
inline double reml_neg2(const RemlData& d, double sv2, double se2) {
    const int m = static_cast<int>(d.ni.size());
    double mu = profiled_mu(d, sv2, se2);
    double val = (d.n_total - m) * std::log(se2) + d.sse / se2;
    double sw = 0;
    for (int i = 0; i < m; ++i) {
        double di = se2 + d.ni[i] * sv2;
        double w = d.ni[i] / di;
        double r = d.ybar[i] - mu;
        val += std::log(di) + w * r * r;
        sw += w;
    }
    return val + std::log(sw);
}

// gradient of reml_neg2 in (sv2, se2); the mu term drops by the envelope
// property at the profiled optimum
inline std::pair<double, double> reml_grad(const RemlData& d, double sv2, double se2) {
    const int m = static_cast<int>(d.ni.size());
    double mu = profiled_mu(d, sv2, se2);
    double sw = 0, dsw_v = 0, dsw_e = 0, gv = 0, ge = 0;
    for (int i = 0; i < m; ++i) {
        double di = se2 + d.ni[i] * sv2;
        double w = d.ni[i] / di;
        double r = d.ybar[i] - mu;
        sw += w;
        dsw_v += -d.ni[i] * d.ni[i] / (di * di);
        dsw_e += -d.ni[i] / (di * di);
        gv += d.ni[i] / di - (d.ni[i] * d.ni[i] / (di * di)) * r * r;
        ge += 1.0 / di - (d.ni[i] / (di * di)) * r * r;
    }
    gv += dsw_v / sw;
    ge += dsw_e / sw + (d.n_total - m) / se2 - d.sse / (se2 * se2);
    return {gv, ge};
}

// minimize f over [lo, hi] by golden section
template <typename F>
double golden_min(F&& f, double lo, double hi, double tol) {
    const double gr = 0.6180339887498949;
    double a = lo, b = hi;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = f(x2);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace detail

// REML fit of (mu, sigma_v2, sigma_e2): Newton in log-variance coordinates
// with analytic gradient, golden-section coordinate descent as fallback, and
// an explicit comparison against the sigma_v2 = 0 boundary solution.
inline VarianceComponents reml_fit(const StratifiedSample& sample) {
    sample.validate();
    const int m = sample.m();
    if (m < 2) throw std::invalid_argument("need m >= 2");
    auto d = detail::reml_data(sample);
    if (d.n_total < m + 1) throw std::invalid_argument("need n_T >= m + 1");
    double lo = *std::min_element(d.ybar.begin(), d.ybar.end());
    double hi = *std::max_element(d.ybar.begin(), d.ybar.end());
    if (!(d.sse > 0) && lo == hi) throw std::invalid_argument("degenerate data: all values identical");

    // boundary candidate: sigma_v2 = 0 collapses to a pooled one-sample fit
    double ssb_w = 0, gm = 0;
    for (int i = 0; i < m; ++i) gm += d.ni[i] * d.ybar[i];
    gm /= d.n_total;
    for (int i = 0; i < m; ++i) ssb_w += d.ni[i] * (d.ybar[i] - gm) * (d.ybar[i] - gm);
    double se2_boundary = (d.sse + ssb_w) / (d.n_total - 1);
    double obj_boundary = detail::reml_neg2(d, 0.0, se2_boundary);

    // interior start from ANOVA moments
    double within = d.sse > 0 ? d.sse / std::max(d.n_total - m, 1) : se2_boundary;
    double nbar = static_cast<double>(d.n_total) / m;
    double between = ssb_w / std::max(m - 1, 1) / nbar;
    double lv = std::log(std::max(between - within / nbar, 1e-4 * within));
    double le = std::log(within);

    auto grad_log = [&](double lv_, double le_) {
        auto [gv, ge] = detail::reml_grad(d, std::exp(lv_), std::exp(le_));
        return std::pair<double, double>{gv * std::exp(lv_), ge * std::exp(le_)};
    };
    auto obj_log = [&](double lv_, double le_) {
        return detail::reml_neg2(d, std::exp(lv_), std::exp(le_));
    };

    bool converged = false;
    int iters = 0;
    for (; iters < 100; ++iters) {
        auto [gv, ge] = grad_log(lv, le);
        if (std::hypot(gv, ge) < 1e-10) {
            converged = true;
            break;
        }
        // finite-difference Hessian of the log-coordinate objective
        const double h = 1e-5;
        auto [gv_v, ge_v] = grad_log(lv + h, le);
        auto [gv_e, ge_e] = grad_log(lv, le + h);
        double hvv = (gv_v - gv) / h, hve = 0.5 * ((ge_v - ge) + (gv_e - gv)) / h;
        double hee = (ge_e - ge) / h;
        double det = hvv * hee - hve * hve;
        double sv_step, se_step;
        if (det > 0 && hvv > 0) {
            sv_step = -(hee * gv - hve * ge) / det;
            se_step = -(hvv * ge - hve * gv) / det;
        } else {
            sv_step = -gv;
            se_step = -ge;
        }
        double cap = 2.0;
        double norm = std::hypot(sv_step, se_step);
        if (norm > cap) {
            sv_step *= cap / norm;
            se_step *= cap / norm;
        }
        double base = obj_log(lv, le), t = 1.0;
        while (t > 1e-6 && obj_log(lv + t * sv_step, le + t * se_step) > base) t *= 0.5;
        if (t <= 1e-6) break;
        lv += t * sv_step;
        le += t * se_step;
    }
    if (!converged) {
        // coordinate descent fallback, then recheck the gradient
        for (int sweep = 0; sweep < 60; ++sweep) {
            double lv0 = lv, le0 = le;
            lv = detail::golden_min([&](double x) { return obj_log(x, le); }, lv - 12, lv + 12, 1e-10);
            le = detail::golden_min([&](double x) { return obj_log(lv, x); }, le - 12, le + 12, 1e-10);
            if (std::abs(lv - lv0) + std::abs(le - le0) < 1e-9) break;
        }
        auto [gv, ge] = grad_log(lv, le);
        converged = std::hypot(gv, ge) < 1e-6 || std::exp(lv) < 1e-8 * std::exp(le);
    }

    VarianceComponents vc;
    vc.iterations = iters;
    double obj_interior = obj_log(lv, le);
    if (obj_boundary <= obj_interior || std::exp(lv) < 1e-10 * std::exp(le)) {
        vc.sigma_v2 = 0.0;
        vc.sigma_e2 = detail::golden_min(
            [&](double x) { return detail::reml_neg2(d, 0.0, std::exp(x)); },
            std::log(se2_boundary) - 4, std::log(se2_boundary) + 4, 1e-12);
        vc.sigma_e2 = std::exp(vc.sigma_e2);
        vc.boundary = true;
        vc.converged = true;
    } else {
        vc.sigma_v2 = std::exp(lv);
        vc.sigma_e2 = std::exp(le);
        vc.converged = converged;
    }
    if (!vc.converged) throw std::runtime_error("REML did not converge");
    vc.mu_hat = detail::profiled_mu(d, vc.sigma_v2, vc.sigma_e2);
    return vc;
}

inline double shrinkage_gamma(const VarianceComponents& vc, int n_m) {
    return vc.sigma_v2 / (vc.sigma_v2 + vc.sigma_e2 / n_m);
}

inline double eblup_mu_hat(const StratifiedSample& sample, const VarianceComponents& vc) {
    double sw = 0, swy = 0;
    for (int i = 0; i < sample.m(); ++i) {
        double phi = 1.0 / (vc.sigma_v2 + vc.sigma_e2 / sample.n(i));
        sw += phi;
        swy += phi * sample.ybar(i);
    }
    return swy / sw;
}

// empirical best linear unbiased predictor of eta_m = E(Ybar_m | theta_m)
inline double eblup_eta(const StratifiedSample& sample, const VarianceComponents& vc,
                        int stratum) {
    vc.validate();
    double g = shrinkage_gamma(vc, sample.n(stratum));
    return g * sample.ybar(stratum) + (1.0 - g) * eblup_mu_hat(sample, vc);
}

// leading prediction variance of the EBLUP: gamma*se2/n_m plus, optionally,
// the contribution from estimating mu
inline double h1m(const VarianceComponents& vc, const StratifiedSample& sample, int stratum,
                  bool include_mu_term = true) {
    vc.validate();
    double g = shrinkage_gamma(vc, sample.n(stratum));
    double val = g * vc.sigma_e2 / sample.n(stratum);
    if (include_mu_term) {
        double sum_phi = 0;
        for (int i = 0; i < sample.m(); ++i)
            sum_phi += 1.0 / (vc.sigma_v2 + vc.sigma_e2 / sample.n(i));
        val += (1.0 - g) * (1.0 - g) / sum_phi;
    }
    return val;
}

inline double mu1(double posterior_variance, double yhat_m, double yhat_hb) {
    if (posterior_variance < 0) throw std::invalid_argument("negative posterior variance");
    double d = yhat_m - yhat_hb;
    return posterior_variance + d * d;
}

inline double mu2(const StratifiedSample& sample, const VarianceComponents& vc, double yhat_m,
                  int stratum) {
    double d = yhat_m - eblup_eta(sample, vc, stratum);
    return h1m(vc, sample, stratum) + d * d;
}

inline double mu3(double mu1_val, double mu2_val) {
    if (mu1_val < 0 || mu2_val < 0) throw std::invalid_argument("negative uncertainty measure");
    return 0.5 * (mu1_val + mu2_val);
}

// Survey-weighted (pseudo-EBLUP) counterparts: the predictor shrinks the
// weighted stratum mean, whose conditional variance given theta is
// sigma_e^2 * sum of squared normalized weights rather than sigma_e^2 / n.
struct WeightedStratumSummary {
    double ybar_w = 0;  // weighted stratum mean
    double delta2 = 0;  // sum of squared normalized weights; 1/n when equal
};

inline double pseudo_gamma(const VarianceComponents& vc, double delta2) {
    return vc.sigma_v2 / (vc.sigma_v2 + vc.sigma_e2 * delta2);
}

inline double pseudo_mu_hat(const VarianceComponents& vc,
                            const std::vector<WeightedStratumSummary>& ws) {
    double sw = 0, swy = 0;
    for (const auto& s : ws) {
        double phi = 1.0 / (vc.sigma_v2 + vc.sigma_e2 * s.delta2);
        sw += phi;
        swy += phi * s.ybar_w;
    }
    return swy / sw;
}

inline double pseudo_eblup(const VarianceComponents& vc,
                           const std::vector<WeightedStratumSummary>& ws, int stratum) {
    double g = pseudo_gamma(vc, ws[stratum].delta2);
    return g * ws[stratum].ybar_w + (1.0 - g) * pseudo_mu_hat(vc, ws);
}

inline double pseudo_h1m(const VarianceComponents& vc,
                         const std::vector<WeightedStratumSummary>& ws, int stratum) {
    double g = pseudo_gamma(vc, ws[stratum].delta2);
    double sum_phi = 0;
    for (const auto& s : ws) sum_phi += 1.0 / (vc.sigma_v2 + vc.sigma_e2 * s.delta2);
    return g * vc.sigma_e2 * ws[stratum].delta2 + (1.0 - g) * (1.0 - g) / sum_phi;
}

inline double pseudo_mu2(const VarianceComponents& vc,
                         const std::vector<WeightedStratumSummary>& ws, double yhat_m,
                         int stratum) {
    double d = yhat_m - pseudo_eblup(vc, ws, stratum);
    return pseudo_h1m(vc, ws, stratum) + d * d;
}

struct UncertaintyReport {
    struct Row {
        int stratum;
        double yhat_hb, yhat_dc, postvar, mu1, h1m, h2m_hat, mu2, mu3;
        double gamma, eblup;
    };
    std::vector<Row> rows;

    void validate() const {
        for (const auto& r : rows) {
            if (r.mu1 < r.postvar - 1e-12 || r.mu1 < 0)
                throw std::logic_error("mu1 below posterior variance");
            if (r.mu2 < r.h1m - 1e-12 || r.h1m < 0)
                throw std::logic_error("mu2 below h1m");
            if (std::abs(r.mu3 - 0.5 * (r.mu1 + r.mu2)) > 1e-12)
                throw std::logic_error("mu3 is not the midpoint");
        }
    }

    void write_csv(std::ostream& os) const {
        os << "stratum,yhat_hb,yhat_dc,postvar,mu1,h1m,h2m_hat,mu2,mu3\n";
        os.precision(17);
        for (const auto& r : rows)
            os << r.stratum << ',' << r.yhat_hb << ',' << r.yhat_dc << ',' << r.postvar << ','
               << r.mu1 << ',' << r.h1m << ',' << r.h2m_hat << ',' << r.mu2 << ',' << r.mu3
               << '\n';
    }
};

}  // namespace dchb
