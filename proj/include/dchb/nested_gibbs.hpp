#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dchb/rng.hpp"
#include "dchb/stratified.hpp"

namespace dchb {

enum class VariancePrior { flat_variance, flat_precision };
enum class ChainInit { data_moments, overdispersed };

struct ChainConfig {
    int total_draws = 1050;
    int burn_in = 50;
    std::uint64_t seed = 1;
    VariancePrior prior_on_variances = VariancePrior::flat_variance;
    ChainInit init = ChainInit::data_moments;
    // test hooks: freeze a variance component instead of sampling it
    std::optional<double> fix_sigma_v2;
    std::optional<double> fix_sigma_e2;
    bool keep_draws = false;

    void validate() const {
        if (total_draws <= burn_in || burn_in < 0)
            throw std::invalid_argument("need total_draws > burn_in >= 0");
    }
};

struct NestedErrorState {
    std::vector<double> theta;  // theta_i = mu + v_i
    double mu;
    double sigma_v2;
    double sigma_e2;
};

struct PosteriorSummary {
    std::vector<double> theta_mean;
    std::vector<double> theta_var;
    double sigma_e2_mean = 0;
    double sigma_v2_mean = 0;
    int retained = 0;
    // split-half discrepancy of the per-stratum theta means, max over strata
    double split_half_max_discrepancy = 0;
    // batch-means MC standard error of each theta mean
    std::vector<double> theta_mcse;
    // populated only when ChainConfig::keep_draws is set
    std::vector<std::vector<double>> theta_draws;
    std::vector<double> sigma_e2_draws;
    std::vector<double> sigma_v2_draws;
};

// Gibbs sampler for Y_ij = mu + v_i + e_ij with flat hyperpriors.
// Full conditionals:
//   theta_i | .  ~ N((n_i ybar_i/se2 + mu/sv2) / (n_i/se2 + 1/sv2), 1/(n_i/se2 + 1/sv2))
//   mu | .       ~ N(mean(theta), sv2/m)
//   se2 | .      ~ InvGamma(nT/2 - 1, SSE/2)        [flat on the variance]
//   sv2 | .      ~ InvGamma(m/2 - 1, SSv/2)
// flat_precision shifts both shapes by +2.
inline PosteriorSummary gibbs_run(const StratifiedSample& sample, const ChainConfig& cfg) {
    sample.validate();
    cfg.validate();
    const int m = sample.m();
    const int nT = sample.n_total();
    if (!cfg.fix_sigma_v2 && m < 3)
        throw std::invalid_argument("flat variance priors need m >= 3 for propriety");
    if (nT < m + 2) throw std::invalid_argument("need n_T >= m + 2");

    std::vector<double> ybar(m), rss_i(m);
    std::vector<int> ni(m);
    double grand = 0;
    for (int i = 0; i < m; ++i) {
        ybar[i] = sample.ybar(i);
        rss_i[i] = sample.rss(i);
        ni[i] = sample.n(i);
        grand += ybar[i] * ni[i];
    }
    grand /= nT;
    double sse_within = sample.rss_within();
    if (!cfg.fix_sigma_e2 && !(sse_within > 0))
        throw std::invalid_argument("zero within-stratum residual sum; sigma_e2 update degenerate");

    Rng rng(derive_seed(cfg.seed, 0x61BB5));

    NestedErrorState st;
    st.theta.assign(ybar.begin(), ybar.end());
    st.mu = grand;
    double within = sse_within > 0 ? sse_within / std::max(nT - m, 1) : 1.0;
    double between = 0;
    for (int i = 0; i < m; ++i) between += (ybar[i] - grand) * (ybar[i] - grand);
    between /= std::max(m - 1, 1);
    st.sigma_e2 = cfg.fix_sigma_e2.value_or(within);
    st.sigma_v2 = cfg.fix_sigma_v2.value_or(std::max(between - within * m / double(nT), 0.01));
    if (cfg.init == ChainInit::overdispersed) {
        st.mu += 5.0 * std::sqrt(st.sigma_v2);
        st.sigma_e2 *= 4.0;
        st.sigma_v2 *= 4.0;
    }

    const double shape_shift = cfg.prior_on_variances == VariancePrior::flat_variance ? -1.0 : 1.0;
    const int retained = cfg.total_draws - cfg.burn_in;
    std::vector<std::vector<double>> theta_draws(m);
    for (auto& v : theta_draws) v.reserve(retained);
    std::vector<double> se2_draws, sv2_draws;
    se2_draws.reserve(retained);
    sv2_draws.reserve(retained);

    for (int it = 0; it < cfg.total_draws; ++it) {
        // theta block
        for (int i = 0; i < m; ++i) {
            double prec = ni[i] / st.sigma_e2 + 1.0 / st.sigma_v2;
            double mean = (ni[i] * ybar[i] / st.sigma_e2 + st.mu / st.sigma_v2) / prec;
            st.theta[i] = rng.normal(mean, 1.0 / std::sqrt(prec));
        }
        // mu
        double tbar = 0;
        for (double t : st.theta) tbar += t;
        tbar /= m;
        st.mu = rng.normal(tbar, std::sqrt(st.sigma_v2 / m));
        // variance components
        if (!cfg.fix_sigma_e2) {
            double sse = 0;
            for (int i = 0; i < m; ++i) {
                double d = ybar[i] - st.theta[i];
                sse += rss_i[i] + ni[i] * d * d;
            }
            st.sigma_e2 = rng.inverse_gamma(nT / 2.0 + shape_shift, sse / 2.0);
        }
        if (!cfg.fix_sigma_v2) {
            double ssv = 0;
            for (double t : st.theta) ssv += (t - st.mu) * (t - st.mu);
            st.sigma_v2 = rng.inverse_gamma(m / 2.0 + shape_shift, ssv / 2.0);
        }
        if (it >= cfg.burn_in) {
            for (int i = 0; i < m; ++i) theta_draws[i].push_back(st.theta[i]);
            se2_draws.push_back(st.sigma_e2);
            sv2_draws.push_back(st.sigma_v2);
        }
    }

    PosteriorSummary out;
    out.retained = retained;
    out.theta_mean.resize(m);
    out.theta_var.resize(m);
    out.theta_mcse.resize(m);
    for (int i = 0; i < m; ++i) {
        const auto& d = theta_draws[i];
        double mean = pairwise_sum(d) / retained;
        double ss = 0;
        for (double x : d) ss += (x - mean) * (x - mean);
        out.theta_mean[i] = mean;
        out.theta_var[i] = ss / (retained - 1);
        double h1 = pairwise_sum(d, 0, retained / 2) / (retained / 2);
        double h2 = pairwise_sum(d, retained / 2, retained) / (retained - retained / 2);
        out.split_half_max_discrepancy =
            std::max(out.split_half_max_discrepancy, std::abs(h1 - h2));
        // batch means, 20 batches
        int nb = 20, bl = retained / nb;
        double bvar = 0;
        for (int bi = 0; bi < nb; ++bi) {
            double bm = pairwise_sum(d, bi * bl, (bi + 1) * bl) / bl;
            bvar += (bm - mean) * (bm - mean);
        }
        out.theta_mcse[i] = std::sqrt(bvar / (nb - 1) / nb);
    }
    out.sigma_e2_mean = pairwise_sum(se2_draws) / retained;
    out.sigma_v2_mean = pairwise_sum(sv2_draws) / retained;
    if (cfg.keep_draws) {
        out.theta_draws = std::move(theta_draws);
        out.sigma_e2_draws = std::move(se2_draws);
        out.sigma_v2_draws = std::move(sv2_draws);
    }
    return out;
}

// Rao-Blackwellized posterior of the finite-population stratum mean:
//   E[Ybar_m|y] = f_m ybar_m + (1 - f_m) E[theta_m|y]
//   V[Ybar_m|y] = (1 - f_m)^2 [ V(theta_m|y) + E(se2|y)/(N_m - n_m) ]
inline std::pair<double, double> population_mean_posterior(const PosteriorSummary& summary,
                                                           const StratifiedSample& sample,
                                                           int stratum) {
    const int n = sample.n(stratum);
    const long long N = sample.strata[stratum].N;
    const double yb = sample.ybar(stratum);
    if (N == n) return {yb, 0.0};
    double f = static_cast<double>(n) / N;
    double mean = f * yb + (1.0 - f) * summary.theta_mean[stratum];
    double var = (1.0 - f) * (1.0 - f) *
                 (summary.theta_var[stratum] + summary.sigma_e2_mean / (N - n));
    return {mean, var};
}

}  // namespace dchb
