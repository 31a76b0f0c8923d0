#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dchb/expfam.hpp"
#include "dchb/quadrature.hpp"

namespace dchb {

// A single-population sample summarized by (n, ybar); theta enters the
// posterior only through n*ybar, so this is sufficient.
struct SinglePopSample {
    int n;
    double ybar;
    long long N;

    double f_n() const { return static_cast<double>(n) / static_cast<double>(N); }

    void validate(const ExpFamModel& model) const {
        if (n < 1 || N < n) throw std::invalid_argument("need 1 <= n <= N");
        if (!model.mean_range().contains(ybar))
            throw std::domain_error("ybar outside mean range");
    }
};

namespace detail {

// log of the prior weight w(t) = exp[-(r/2){h(t)-beta}^2] h'(t)
inline double log_prior_weight(const LinkSpec& link, const PriorSpec& prior, double t) {
    double hp = link.h_prime(t);
    if (!(hp > 0)) throw std::domain_error("link must be strictly increasing");
    double d = link.h(t) - prior.beta;
    return -0.5 * prior.r * d * d + std::log(hp);
}

inline double mode_guess(const ExpFamModel& model, double ybar) {
    auto mr = model.mean_range();
    if (mr.strictly_interior(ybar)) return model.theta_at_mean(ybar);
    // boundary ybar: kernel mode runs off to +-inf; start near the center
    switch (model.family) {
        case Family::bernoulli: return ybar <= 0.5 ? -1.0 : 1.0;
        default: return 0.0;
    }
}

}  // namespace detail

// E[psi'(theta) | y_s]: ratio of integrals of psi'(t) w(t) k(t) over w(t) k(t)
// with k the posterior kernel of T_n.
inline double posterior_mean_psi_prime(const ExpFamModel& model, const LinkSpec& link,
                                       const PriorSpec& prior, const SinglePopSample& sample,
                                       const QuadratureConfig& quad_cfg = {}) {
    sample.validate(model);
    prior.validate();
    // with the flat-prior sentinel r = 0 the kernel is integrable only for
    // strictly interior ybar (e.g. bernoulli ybar in {0,1} pushes all mass
    // to infinity)
    if (prior.r == 0.0 && !model.mean_range().strictly_interior(sample.ybar))
        throw std::domain_error("non-integrable kernel: boundary ybar with flat prior");
    auto logf = [&](double t) {
        return log_kernel(model, sample.n, sample.ybar, t) +
               detail::log_prior_weight(link, prior, t);
    };
    auto weight = [&](double t) { return model.psi_prime(t); };
    return log_density_weighted_mean(weight, logf, detail::mode_guess(model, sample.ybar),
                                     quad_cfg);
}

// Ybar^B = f_n ybar_s + (1 - f_n) E[psi'(theta)|y_s]
inline double bayes_estimator(const ExpFamModel& model, const LinkSpec& link,
                              const PriorSpec& prior, const SinglePopSample& sample,
                              const QuadratureConfig& quad_cfg = {}) {
    double f = sample.f_n();
    if (f >= 1.0) return sample.ybar;  // census
    return f * sample.ybar + (1.0 - f) * posterior_mean_psi_prime(model, link, prior,
                                                                  sample, quad_cfg);
}

// The limit C = psi'(T).  Known in closed form only for the three canonical
// members with identity link, where C = ybar_s.
inline double limit_constant(const ExpFamModel& model, const SinglePopSample& sample) {
    switch (model.family) {
        case Family::gaussian:
        case Family::bernoulli:
        case Family::poisson: break;
    }
    if (!model.mean_range().strictly_interior(sample.ybar))
        throw std::domain_error("limit constant undefined at boundary ybar");
    return sample.ybar;
}

// Yhat = Yhat^B - {f ybar_s + (1-f) C - ybar_w}
inline double design_consistent_correct(double yhat_b, double f, double ybar_s,
                                        double C, double ybar_w) {
    return yhat_b - (f * ybar_s + (1.0 - f) * C - ybar_w);
}

struct SweepRow {
    std::string model;
    int n;
    double posterior_mean;
    double limit_C;
    double abs_error;
};

inline std::vector<SweepRow> convergence_sweep(const ExpFamModel& model, const LinkSpec& link,
                                               const PriorSpec& prior, double ybar,
                                               const std::vector<int>& n_grid,
                                               const QuadratureConfig& quad_cfg = {}) {
    for (std::size_t i = 1; i < n_grid.size(); ++i)
        if (n_grid[i] <= n_grid[i - 1])
            throw std::invalid_argument("n_grid must be strictly increasing");
    std::vector<SweepRow> rows;
    rows.reserve(n_grid.size());
    for (int n : n_grid) {
        SinglePopSample s{n, ybar, 2LL * n};
        double pm = posterior_mean_psi_prime(model, link, prior, s, quad_cfg);
        double C = limit_constant(model, s);
        rows.push_back({family_name(model.family), n, pm, C, std::abs(pm - C)});
    }
    return rows;
}

}  // namespace dchb
