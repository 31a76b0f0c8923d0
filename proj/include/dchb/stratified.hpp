#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "dchb/expfam.hpp"
#include "dchb/quadrature.hpp"
#include "dchb/rng.hpp"

namespace dchb {

struct StratumData {
    long long N;
    std::vector<double> y;
};

struct StratifiedSample {
    std::vector<StratumData> strata;

    int m() const { return static_cast<int>(strata.size()); }
    int n(int i) const { return static_cast<int>(strata[i].y.size()); }
    int n_total() const {
        int t = 0;
        for (const auto& s : strata) t += static_cast<int>(s.y.size());
        return t;
    }
    double ybar(int i) const {
        const auto& v = strata[i].y;
        return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    }
    double f(int i) const { return static_cast<double>(n(i)) / strata[i].N; }
    // within-stratum residual sum of squares
    double rss(int i) const {
        double yb = ybar(i), s = 0;
        for (double v : strata[i].y) s += (v - yb) * (v - yb);
        return s;
    }
    double rss_within() const {
        double s = 0;
        for (int i = 0; i < m(); ++i) s += rss(i);
        return s;
    }

    void validate() const {
        if (m() < 2) throw std::invalid_argument("need m >= 2 strata");
        for (const auto& s : strata) {
            if (s.y.empty()) throw std::invalid_argument("empty stratum");
            if (static_cast<long long>(s.y.size()) > s.N)
                throw std::invalid_argument("n_i exceeds N_i");
        }
    }
};

enum class CaseIIntegration { nested_quadrature, importance_mc };

struct CaseIConfig {
    double phi = 1.0;
    double a = 1.0;
    double b = 1.0;
    CaseIIntegration integration = CaseIIntegration::nested_quadrature;
    int nodes_per_dim = 201;       // nested quadrature (m <= 3)
    double half_width_sigmas = 12.0;
    int mc_draws = 100000;         // importance sampling (m <= 10)
    std::uint64_t seed = 1;

    void validate() const {
        if (phi <= 0) throw std::invalid_argument("phi must be positive");
        if (a <= 0 || b <= 0) throw std::invalid_argument("a and b must be positive");
    }
};

namespace detail {

// mode of one stratum's likelihood factor, with a pseudo-count nudge so
// boundary sample means still give a finite center
inline double stratum_center(const ExpFamModel& model, int n, double yb) {
    auto mr = model.mean_range();
    if (!mr.strictly_interior(yb)) {
        if (model.family == Family::bernoulli) yb = (yb * n + 0.5) / (n + 1.0);
        else yb = (yb * n + 0.5) / n;
    }
    return model.theta_at_mean(yb);
}

inline double stratum_scale(const ExpFamModel& model, double phi, int n, double center) {
    double curv = n * model.psi_double_prime(center) / phi;
    return 1.0 / std::sqrt(std::max(curv, 1e-12));
}

// Evaluates log g(theta_m): the (m-1)-dim integral of the inner strata
// likelihood factors against the prior bracket.  Inner grids and
// log-likelihood values are precomputed once; only the bracket term depends
// on theta_m.
class GIntegralEvaluator {
public:
    // drop_cross_terms replaces {h(theta_i) - hbar}^2 by h^2(theta_i)
    GIntegralEvaluator(const ExpFamModel& model, const LinkSpec& link,
                       const StratifiedSample& sample, const CaseIConfig& cfg,
                       bool drop_cross_terms = false)
        : model_(model), link_(link), sample_(sample), cfg_(cfg),
          drop_cross_(drop_cross_terms) {
        sample.validate();
        cfg.validate();
        const int m = sample.m();
        if (cfg.integration == CaseIIntegration::nested_quadrature && m > 3)
            throw std::invalid_argument("nested quadrature supports m <= 3");
        if (m > 10) throw std::invalid_argument("importance sampling supports m <= 10");
        for (int i = 0; i + 1 < m; ++i) {
            Dim d;
            d.center = stratum_center(model, sample.n(i), sample.ybar(i));
            d.scale = stratum_scale(model, cfg.phi, sample.n(i), d.center);
            if (cfg.integration == CaseIIntegration::nested_quadrature) {
                int k = cfg.nodes_per_dim | 1;  // Simpson needs odd count
                double lo = d.center - cfg.half_width_sigmas * d.scale;
                double hi = d.center + cfg.half_width_sigmas * d.scale;
                d.step = (hi - lo) / (k - 1);
                d.nodes.resize(k);
                d.loglik.resize(k);
                d.weights.resize(k);
                for (int j = 0; j < k; ++j) {
                    double t = lo + j * d.step;
                    d.nodes[j] = t;
                    d.loglik[j] = stratum_loglik(i, t);
                    d.weights[j] = (j == 0 || j == k - 1) ? 1.0
                                   : (j % 2 == 1)         ? 4.0
                                                          : 2.0;
                    d.weights[j] *= d.step / 3.0;
                }
            }
            dims_.push_back(std::move(d));
        }
    }

    double log_g(double theta_m) const {
        if (cfg_.integration == CaseIIntegration::nested_quadrature)
            return log_g_grid(theta_m);
        return log_g_importance(theta_m);
    }

private:
    struct Dim {
        double center, scale, step = 0;
        std::vector<double> nodes, loglik, weights;
    };

    // log of h'(t) * prod_j exp[(1/phi){y_ij t - psi(t)}] for inner stratum i
    double stratum_loglik(int i, double t) const {
        double hp = link_.h_prime(t);
        if (!(hp > 0)) throw std::domain_error("link must be strictly increasing");
        int n = sample_.n(i);
        return std::log(hp) +
               n / cfg_.phi * (sample_.ybar(i) * t - model_.psi(t));
    }

    double log_bracket(const std::vector<double>& h_inner, double h_m) const {
        double s = cfg_.a;
        const int m = sample_.m();
        if (drop_cross_) {
            for (double h : h_inner) s += h * h;
            s += h_m * h_m;
        } else {
            double hbar = h_m;
            for (double h : h_inner) hbar += h;
            hbar /= m;
            for (double h : h_inner) s += (h - hbar) * (h - hbar);
            s += (h_m - hbar) * (h_m - hbar);
        }
        return -0.5 * (cfg_.b + m - 1) * std::log(s);
    }

    double log_g_grid(double theta_m) const {
        const double h_m = link_.h(theta_m);
        const int d = static_cast<int>(dims_.size());
        // online max-shifted accumulation over the tensor grid
        double shift = -std::numeric_limits<double>::infinity();
        double acc = 0.0;
        std::vector<int> idx(d, 0);
        std::vector<double> h_inner(d);
        for (;;) {
            double lw = 0.0;
            for (int i = 0; i < d; ++i) {
                lw += dims_[i].loglik[idx[i]] + std::log(dims_[i].weights[idx[i]]);
                h_inner[i] = link_.h(dims_[i].nodes[idx[i]]);
            }
            lw += log_bracket(h_inner, h_m);
            if (lw > shift) {
                acc = acc * std::exp(shift - lw) + 1.0;
                shift = lw;
            } else {
                acc += std::exp(lw - shift);
            }
            int i = 0;
            for (; i < d; ++i) {
                if (++idx[i] < static_cast<int>(dims_[i].nodes.size())) break;
                idx[i] = 0;
            }
            if (i == d) break;
        }
        return shift + std::log(acc);
    }

    double log_g_importance(double theta_m) const {
        const double h_m = link_.h(theta_m);
        const int d = static_cast<int>(dims_.size());
        const double inflate = 1.5;
        Rng rng(derive_seed(cfg_.seed, 0x6721));
        double shift = -std::numeric_limits<double>::infinity();
        double acc = 0.0;
        std::vector<double> h_inner(d);
        const double log2pi = std::log(6.283185307179586477);
        for (int k = 0; k < cfg_.mc_draws; ++k) {
            double lw = 0.0;
            for (int i = 0; i < d; ++i) {
                double sd = inflate * dims_[i].scale;
                double z = rng.normal();
                double t = dims_[i].center + sd * z;
                // target loglik minus proposal logpdf
                lw += stratum_loglik(i, t) + 0.5 * z * z + std::log(sd) + 0.5 * log2pi;
                h_inner[i] = link_.h(t);
            }
            lw += log_bracket(h_inner, h_m);
            if (lw > shift) {
                acc = acc * std::exp(shift - lw) + 1.0;
                shift = lw;
            } else {
                acc += std::exp(lw - shift);
            }
        }
        return shift + std::log(acc) - std::log(double(cfg_.mc_draws));
    }

    const ExpFamModel& model_;
    const LinkSpec& link_;
    const StratifiedSample& sample_;
    CaseIConfig cfg_;
    bool drop_cross_;
    std::vector<Dim> dims_;
};

}  // namespace detail

// g(theta_m): the inner (m-1)-dimensional integral of the case-(i)
// representation.  Does not depend on n_m data beyond fixing hbar's last slot.
inline double g_integral(const ExpFamModel& model, const LinkSpec& link,
                         const StratifiedSample& sample, const CaseIConfig& cfg,
                         double theta_m) {
    detail::GIntegralEvaluator ev(model, link, sample, cfg);
    double v = std::exp(ev.log_g(theta_m));
    if (!std::isfinite(v)) throw std::runtime_error("g integral did not converge");
    return v;
}

// companion integral with the centered bracket replaced by plain h^2 terms;
// since sum (h_i - hbar)^2 <= sum h_i^2, this is a pointwise lower envelope
// of g
inline double g_integral_dropped_cross_terms(const ExpFamModel& model, const LinkSpec& link,
                                             const StratifiedSample& sample,
                                             const CaseIConfig& cfg, double theta_m) {
    detail::GIntegralEvaluator ev(model, link, sample, cfg, true);
    return std::exp(ev.log_g(theta_m));
}

// E[psi'(theta_m)|y_s] for case (i): ratio of 1-D integrals of
// psi'(t) h'(t) g(t) and h'(t) g(t) against the stratum-m kernel.
inline double case_i_posterior_mean(const ExpFamModel& model, const LinkSpec& link,
                                    const StratifiedSample& sample, const CaseIConfig& cfg) {
    sample.validate();
    cfg.validate();
    const int m = sample.m();
    const int nm = sample.n(m - 1);
    const double ybm = sample.ybar(m - 1);
    detail::GIntegralEvaluator ev(model, link, sample, cfg);

    auto logf = [&](double t) {
        double hp = link.h_prime(t);
        return nm / cfg.phi * (ybm * t - model.psi(t)) + std::log(hp) + ev.log_g(t);
    };
    auto weight = [&](double t) { return model.psi_prime(t); };
    QuadratureConfig qc;
    qc.abs_tol = 1e-9;
    qc.rel_tol = 1e-7;
    return log_density_weighted_mean(weight, logf,
                                     detail::stratum_center(model, nm, ybm), qc);
}

// log pi(theta | y_s) for case (ii), normal model, up to an additive constant
inline double case_ii_log_density(const StratifiedSample& sample, double a, double b,
                                  const std::vector<double>& theta) {
    sample.validate();
    if (a <= 0 || b <= 0) throw std::invalid_argument("a and b must be positive");
    const int m = sample.m();
    if (static_cast<int>(theta.size()) != m)
        throw std::invalid_argument("theta dimension mismatch");
    double rss = 0.0;
    for (int i = 0; i < m; ++i) {
        double d = sample.ybar(i) - theta[i];
        rss += sample.rss(i) + sample.n(i) * d * d;
    }
    if (!(rss > 0.0))
        throw std::domain_error("singular density: zero residual sum at this theta");
    double tbar = std::accumulate(theta.begin(), theta.end(), 0.0) / m;
    double sb = a;
    for (double t : theta) sb += (t - tbar) * (t - tbar);
    int n_T = sample.n_total();
    return -(n_T / 2.0 + 1.0) * std::log(rss) - 0.5 * (b + m - 1) * std::log(sb);
}

enum class CaseIIMethod { grid, mcmc };

struct CaseIIOptions {
    int grid_nodes = 121;          // per dimension, m <= 3
    int max_refinements = 3;       // node-count doublings until the mean settles
    double grid_tol = 1e-7;
    int mcmc_total = 22000;
    int mcmc_burn = 2000;
    std::uint64_t seed = 1;
};

struct CaseIIDiagnostics {
    double split_half_discrepancy = 0.0;  // |first-half mean - second-half mean|
    double acceptance_rate = 1.0;
    double mc_standard_error = 0.0;
};

namespace detail {

inline void case_ii_preconditions(const StratifiedSample& sample) {
    sample.validate();
    if (!(sample.rss_within() > 0.0))
        throw std::domain_error("case (ii) density is improper: zero within-stratum variance");
}

// The (3.4) posterior has polynomial tails, so a uniform box either clips
// mass or undersamples the bulk.  Substituting theta_i = c_i + s_i tan(u_i)
// maps each axis onto a fixed cube (-pi/2, pi/2)^m where the integrand decays
// to zero at the edges; a plain Simpson tensor grid then converges under
// node-count refinement.
inline double case_ii_grid_mean(const StratifiedSample& sample, double a, double b,
                                const CaseIIOptions& opt) {
    const int m = sample.m();
    if (m > 3) throw std::invalid_argument("grid method supports m <= 3");
    std::vector<double> center(m), scale(m);
    double pooled = std::sqrt(sample.rss_within() / sample.n_total());
    for (int i = 0; i < m; ++i) {
        center[i] = sample.ybar(i);
        scale[i] = std::max(pooled, 1e-3) / std::sqrt(double(sample.n(i)));
    }
    const double half_pi = 1.5707963267948966192;
    const double edge = 1e-6;  // keep tan finite; the clipped mass is O(edge^{n_T+1})

    auto pass_mean = [&](int k) {
        k |= 1;
        double step = 2.0 * (half_pi - edge) / (k - 1);
        std::vector<int> idx(m, 0);
        std::vector<double> theta(m);
        double shift = -std::numeric_limits<double>::infinity();
        double mass = 0.0, num = 0.0;
        for (;;) {
            double lw = 0.0;
            for (int i = 0; i < m; ++i) {
                double u = -(half_pi - edge) + idx[i] * step;
                double c = std::cos(u);
                theta[i] = center[i] + scale[i] * std::tan(u);
                int j = idx[i];
                double sw = (j == 0 || j == k - 1) ? 1.0 : (j % 2 == 1) ? 4.0 : 2.0;
                // Simpson weight plus tan-substitution Jacobian s_i / cos^2
                lw += std::log(sw * step / 3.0) + std::log(scale[i]) - 2.0 * std::log(c);
            }
            lw += case_ii_log_density(sample, a, b, theta);
            double e;
            if (lw > shift) {
                double rescale = std::exp(shift - lw);
                mass *= rescale;
                num *= rescale;
                shift = lw;
                e = 1.0;
            } else {
                e = std::exp(lw - shift);
            }
            mass += e;
            num += e * theta[m - 1];
            int i = 0;
            for (; i < m; ++i) {
                if (++idx[i] < k) break;
                idx[i] = 0;
            }
            if (i == m) break;
        }
        return num / mass;
    };

    int k = opt.grid_nodes | 1;
    double prev = pass_mean(k);
    for (int r = 0; r < opt.max_refinements; ++r) {
        k = 2 * k - 1;
        double cur = pass_mean(k);
        if (std::abs(cur - prev) < opt.grid_tol) return cur;
        prev = cur;
    }
    return prev;
}

inline double case_ii_mcmc_mean(const StratifiedSample& sample, double a, double b,
                                const CaseIIOptions& opt, CaseIIDiagnostics* diag) {
    const int m = sample.m();
    Rng rng(derive_seed(opt.seed, 0xC11));
    std::vector<double> theta(m), step(m);
    double pooled = std::sqrt(sample.rss_within() / sample.n_total());
    for (int i = 0; i < m; ++i) {
        theta[i] = sample.ybar(i);
        step[i] = 2.4 * std::max(pooled, 1e-3) / std::sqrt(double(sample.n(i)));
    }
    double logp = case_ii_log_density(sample, a, b, theta);
    std::vector<double> retained;
    retained.reserve(opt.mcmc_total - opt.mcmc_burn);
    long long accepted = 0, proposed = 0;
    for (int it = 0; it < opt.mcmc_total; ++it) {
        for (int i = 0; i < m; ++i) {
            double old = theta[i];
            theta[i] = old + step[i] * rng.normal();
            double lp_new;
            try {
                lp_new = case_ii_log_density(sample, a, b, theta);
            } catch (const std::domain_error&) {
                theta[i] = old;
                continue;
            }
            ++proposed;
            if (std::log(rng.uniform()) < lp_new - logp) {
                logp = lp_new;
                ++accepted;
                if (it < opt.mcmc_burn) step[i] *= 1.02;  // adapt during burn-in only
            } else {
                theta[i] = old;
                if (it < opt.mcmc_burn) step[i] *= 0.98;
            }
        }
        if (it >= opt.mcmc_burn) retained.push_back(theta[m - 1]);
    }
    const std::size_t R = retained.size();
    double mean = pairwise_sum(retained) / R;
    if (diag) {
        double m1 = pairwise_sum(retained, 0, R / 2) / (R / 2);
        double m2 = pairwise_sum(retained, R / 2, R) / (R - R / 2);
        diag->split_half_discrepancy = std::abs(m1 - m2);
        diag->acceptance_rate = proposed ? double(accepted) / proposed : 0.0;
        double ss = 0;
        for (double t : retained) ss += (t - mean) * (t - mean);
        // crude MCSE; autocorrelation inflation folded into a factor of 5
        diag->mc_standard_error = 5.0 * std::sqrt(ss / (R - 1) / R);
    }
    return mean;
}

}  // namespace detail

inline double case_ii_posterior_mean(const StratifiedSample& sample, double a, double b,
                                     CaseIIMethod method, const CaseIIOptions& opt = {},
                                     CaseIIDiagnostics* diag = nullptr) {
    detail::case_ii_preconditions(sample);
    if (method == CaseIIMethod::grid) return detail::case_ii_grid_mean(sample, a, b, opt);
    return detail::case_ii_mcmc_mean(sample, a, b, opt, diag);
}

// ratio int_{eps1}^inf (n x^2 + d)^{-(n/2+1)} dx / int_0^inf ...; via
// x = sqrt(d/n) tan(u) both integrals become int cos^n(u) du on [.,pi/2]
inline double tail_ratio_check(int n, double d, double eps1) {
    if (n < 2 || d <= 0 || eps1 <= 0)
        throw std::invalid_argument("tail_ratio_check: need n >= 2, d > 0, eps1 > 0");
    double u1 = std::atan(eps1 * std::sqrt(double(n) / d));
    auto f = [&](double u) { return std::pow(std::cos(u), n); };
    const double half_pi = 1.5707963267948966192;
    double num = integrate(f, u1, half_pi, 1e-14);
    double den = integrate(f, 0.0, half_pi, 1e-14);
    return num / den;
}

// Yhat_m = Yhat_m^HB - {f_m ybar_m + (1 - f_m) C_m - ybar_mw}
inline double corrected_stratum_estimator(double yhat_hb, double f_m, double ybar_m,
                                          double C_m, double ybar_mw) {
    return yhat_hb - (f_m * ybar_m + (1.0 - f_m) * C_m - ybar_mw);
}

}  // namespace dchb
