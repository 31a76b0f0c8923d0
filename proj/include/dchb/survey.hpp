#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dchb/rng.hpp"

namespace dchb {

struct PopulationStratum {
    std::vector<double> values;
    std::vector<double> sizes;   // x_ij > 0, frozen with the population
    std::vector<double> probs;   // per-draw selection probabilities
    std::vector<double> cum_p;   // cumulative, for inverse-CDF sampling

    long long N() const { return static_cast<long long>(values.size()); }
    double mean() const {
        double s = 0;
        for (double v : values) s += v;
        return s / values.size();
    }
    double p(std::size_t j) const { return probs[j]; }

    void finalize() {
        if (values.size() != sizes.size() || values.empty())
            throw std::invalid_argument("values/sizes mismatch");
        double tot = 0;
        for (double x : sizes) {
            if (!(x > 0)) throw std::invalid_argument("size measures must be positive");
            tot += x;
        }
        probs.resize(sizes.size());
        cum_p.resize(sizes.size());
        double acc = 0;
        for (std::size_t j = 0; j < sizes.size(); ++j) {
            probs[j] = sizes[j] / tot;
            acc += probs[j];
            cum_p[j] = acc;
        }
        cum_p.back() = 1.0;
    }
};

struct FinitePopulation {
    std::vector<PopulationStratum> strata;
    int m() const { return static_cast<int>(strata.size()); }
};

struct Draw {
    int unit;
    double value;
    double p;  // per-draw selection probability of that unit
};

using SampleDraws = std::vector<Draw>;

// Values from the nested error model Y_ij = mu + v_i + e_ij; size measures
// Exponential(mean 1), drawn once and frozen with the population.
inline FinitePopulation generate_population(int m, long long N_i, double mu, double sigma_v,
                                            double sigma_e, std::uint64_t seed) {
    if (m < 1 || N_i < 1) throw std::invalid_argument("need m >= 1, N_i >= 1");
    if (sigma_v < 0 || sigma_e < 0) throw std::invalid_argument("negative sigma");
    FinitePopulation pop;
    pop.strata.resize(m);
    for (int i = 0; i < m; ++i) {
        Rng rng(derive_seed(seed, 0x909, i));
        auto& st = pop.strata[i];
        double v = sigma_v > 0 ? rng.normal(0, sigma_v) : 0.0;
        st.values.resize(N_i);
        st.sizes.resize(N_i);
        for (long long j = 0; j < N_i; ++j) {
            st.values[j] = mu + v + (sigma_e > 0 ? rng.normal(0, sigma_e) : 0.0);
            st.sizes[j] = rng.exponential(1.0);
        }
        st.finalize();
    }
    return pop;
}

// PPSWR: n independent draws, inverse-CDF on the cumulative p vector
inline SampleDraws ppswr_sample(const FinitePopulation& pop, int stratum, int n,
                                std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    const auto& st = pop.strata.at(stratum);
    Rng rng(derive_seed(seed, 0x5A17, stratum));
    SampleDraws out;
    out.reserve(n);
    for (int k = 0; k < n; ++k) {
        double u = rng.uniform();
        auto it = std::lower_bound(st.cum_p.begin(), st.cum_p.end(), u);
        int j = static_cast<int>(it - st.cum_p.begin());
        out.push_back({j, st.values[j], st.p(j)});
    }
    return out;
}

// ybar_w = (1/(nN)) sum y_k / p_k over the n with-replacement draws
inline double hansen_hurwitz_mean(const SampleDraws& draws, long long N) {
    if (draws.empty()) throw std::invalid_argument("empty sample");
    for (const auto& d : draws)
        if (!(d.p > 0)) throw std::invalid_argument("zero selection probability");
    // self-weighting fast path: with every p exactly 1/N the estimator equals
    // the sample mean, and returning it directly makes the collapse bit-exact
    const double uniform = 1.0 / static_cast<double>(N);
    bool equal = true;
    for (const auto& d : draws)
        if (d.p != uniform) {
            equal = false;
            break;
        }
    double s = 0;
    if (equal) {
        for (const auto& d : draws) s += d.value;
        return s / static_cast<double>(draws.size());
    }
    for (const auto& d : draws) s += d.value / d.p;
    return s / (static_cast<double>(draws.size()) * N);
}

// ratio-form weighted mean sum(y/p) / sum(1/p); design-consistent like the
// Hansen-Hurwitz mean but with noise scaled by the residuals y - Ybar rather
// than by y itself, so it stays usable when sizes carry no information about y
inline double hajek_mean(const SampleDraws& draws) {
    if (draws.empty()) throw std::invalid_argument("empty sample");
    for (const auto& d : draws)
        if (!(d.p > 0)) throw std::invalid_argument("zero selection probability");
    bool equal = true;
    for (const auto& d : draws)
        if (d.p != draws.front().p) {
            equal = false;
            break;
        }
    double num = 0;
    if (equal) {
        // exact self-weighting collapse, same accumulation order as the
        // unweighted sample mean
        for (const auto& d : draws) num += d.value;
        return num / static_cast<double>(draws.size());
    }
    double den = 0;
    for (const auto& d : draws) {
        num += d.value / d.p;
        den += 1.0 / d.p;
    }
    return num / den;
}

// sum of squared normalized inverse-probability weights; equals 1/n exactly
// for a self-weighting sample
inline double sum_sq_normalized_weights(const SampleDraws& draws) {
    if (draws.empty()) throw std::invalid_argument("empty sample");
    bool equal = true;
    for (const auto& d : draws) {
        if (!(d.p > 0)) throw std::invalid_argument("zero selection probability");
        if (d.p != draws.front().p) equal = false;
    }
    if (equal) return 1.0 / static_cast<double>(draws.size());
    double tot = 0;
    for (const auto& d : draws) tot += 1.0 / d.p;
    double ss = 0;
    for (const auto& d : draws) {
        double w = (1.0 / d.p) / tot;
        ss += w * w;
    }
    return ss;
}

// All N^n ordered samples with their probabilities; brute-force oracle for
// design-expectation tests.
inline std::vector<std::pair<SampleDraws, double>> enumerate_designs(
    const FinitePopulation& pop, int stratum, int n) {
    const auto& st = pop.strata.at(stratum);
    const long long N = st.N();
    double total = std::pow(static_cast<double>(N), n);
    if (total > 1e6) throw std::invalid_argument("enumeration limit N^n <= 1e6 exceeded");
    std::vector<std::pair<SampleDraws, double>> out;
    std::vector<int> idx(n, 0);
    for (;;) {
        SampleDraws s;
        double prob = 1.0;
        for (int k = 0; k < n; ++k) {
            int j = idx[k];
            s.push_back({j, st.values[j], st.p(j)});
            prob *= st.p(j);
        }
        out.emplace_back(std::move(s), prob);
        int k = 0;
        for (; k < n; ++k) {
            if (++idx[k] < N) break;
            idx[k] = 0;
        }
        if (k == n) break;
    }
    return out;
}

}  // namespace dchb
