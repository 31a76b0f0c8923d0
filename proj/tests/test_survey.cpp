#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <map>
#include <vector>

#include "dchb/survey.hpp"

using namespace dchb;

namespace {

FinitePopulation toy_pop(std::vector<double> values, std::vector<double> sizes) {
    FinitePopulation pop;
    PopulationStratum st;
    st.values = std::move(values);
    st.sizes = std::move(sizes);
    st.finalize();
    pop.strata.push_back(std::move(st));
    return pop;
}

}  // namespace

TEST_CASE("selection probabilities are normalized") {
    auto pop = generate_population(5, 40, 50, 1, 1, 123);
    for (const auto& st : pop.strata) {
        double sum = 0;
        for (long long j = 0; j < st.N(); ++j) {
            CHECK(st.p(j) > 0.0);
            sum += st.p(j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("population generation: moments and degenerate case") {
    SUBCASE("zero variances give constant values") {
        auto pop = generate_population(3, 10, 50, 0, 0, 9);
        for (const auto& st : pop.strata)
            for (double v : st.values) CHECK(v == 50.0);
    }
    SUBCASE("stratum-mean variance tracks sigma_v^2 + sigma_e^2/N over seeds") {
        // law of total variance across 50 seeds
        const int m = 100;
        const long long N = 60;
        double acc = 0;
        int count = 0;
        for (std::uint64_t seed = 1; seed <= 50; ++seed) {
            auto pop = generate_population(m, N, 50, 1, 1, seed);
            double gm = 0;
            for (const auto& st : pop.strata) gm += st.mean();
            gm /= m;
            double var = 0;
            for (const auto& st : pop.strata) var += (st.mean() - gm) * (st.mean() - gm);
            acc += var / (m - 1);
            ++count;
        }
        double avg = acc / count;
        double want = 1.0 + 1.0 / 60;
        CHECK(avg > 0.7 * want);
        CHECK(avg < 1.3 * want);
    }
    SUBCASE("size measures average to 1") {
        auto pop = generate_population(100, 60, 50, 1, 1, 77);
        double s = 0;
        long long c = 0;
        for (const auto& st : pop.strata)
            for (double x : st.sizes) {
                s += x;
                ++c;
            }
        CHECK(s / c > 0.97);
        CHECK(s / c < 1.03);
    }
    SUBCASE("deterministic given seed") {
        auto a = generate_population(3, 10, 50, 1, 1, 5);
        auto b = generate_population(3, 10, 50, 1, 1, 5);
        CHECK(a.strata[2].values == b.strata[2].values);
        CHECK(a.strata[2].sizes == b.strata[2].sizes);
    }
}

TEST_CASE("ppswr draw frequencies") {
    SUBCASE("equal sizes: uniform by chi-square at alpha = 0.01") {
        auto pop = toy_pop({1, 2, 3, 4, 5}, {1, 1, 1, 1, 1});
        const int R = 100000;
        std::vector<int> freq(5, 0);
        auto draws = ppswr_sample(pop, 0, R, 42);
        for (const auto& d : draws) ++freq[d.unit];
        double chi2 = 0;
        for (int f : freq) chi2 += (f - R / 5.0) * (f - R / 5.0) / (R / 5.0);
        CHECK(chi2 < 13.277);  // chi2_{4, 0.01}
    }
    SUBCASE("sizes (1,2,3): multinomial 3-sigma bands at 1e5 draws") {
        auto pop = toy_pop({1, 2, 3}, {1, 2, 3});
        const int R = 100000;
        std::vector<int> freq(3, 0);
        auto draws = ppswr_sample(pop, 0, R, 7);
        for (const auto& d : draws) ++freq[d.unit];
        for (int j = 0; j < 3; ++j) {
            double p = (j + 1) / 6.0;
            double sd = std::sqrt(R * p * (1 - p));
            CHECK(std::abs(freq[j] - R * p) <= 3.0 * sd);
        }
    }
    SUBCASE("n=1 draws have the correct marginal law") {
        auto pop = toy_pop({1, 2, 3}, {1, 2, 3});
        std::vector<int> freq(3, 0);
        for (std::uint64_t s = 0; s < 30000; ++s) {
            auto d = ppswr_sample(pop, 0, 1, s);
            ++freq[d[0].unit];
        }
        for (int j = 0; j < 3; ++j) {
            double p = (j + 1) / 6.0;
            double sd = std::sqrt(30000 * p * (1 - p));
            CHECK(std::abs(freq[j] - 30000 * p) <= 4.0 * sd);
        }
    }
}

TEST_CASE("hansen-hurwitz: equal probabilities collapse to the sample mean") {
    auto pop = toy_pop({4, 8, 6, 2}, {1, 1, 1, 1});
    auto draws = ppswr_sample(pop, 0, 10, 3);
    double mean = 0;
    for (const auto& d : draws) mean += d.value;
    mean /= draws.size();
    CHECK(hansen_hurwitz_mean(draws, 4) == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("hajek mean: self-weighting collapse, range bound, design consistency") {
    auto eqpop = toy_pop({4, 8, 6, 2}, {1, 1, 1, 1});
    auto eq = ppswr_sample(eqpop, 0, 10, 3);
    double mean = 0;
    for (const auto& d : eq) mean += d.value;
    mean /= eq.size();
    CHECK(hajek_mean(eq) == mean);

    // convex combination of drawn values
    auto pop = toy_pop({1, 2, 3, 4, 5}, {2, 1, 1, 3, 1});
    auto draws = ppswr_sample(pop, 0, 8, 5);
    double h = hajek_mean(draws);
    double lo = 1e300, hi = -1e300;
    for (const auto& d : draws) {
        lo = std::min(lo, d.value);
        hi = std::max(hi, d.value);
    }
    CHECK(h >= lo);
    CHECK(h <= hi);

    // MSE against the population mean shrinks roughly like 1/n
    auto big = generate_population(1, 60, 50, 1, 1, 314);
    double Ybar = big.strata[0].mean();
    std::vector<double> mses;
    for (int n : {10, 160}) {
        double acc = 0;
        const int R = 4000;
        for (int r = 0; r < R; ++r) {
            double hh = hajek_mean(ppswr_sample(big, 0, n, derive_seed(12, r, n)));
            acc += (hh - Ybar) * (hh - Ybar);
        }
        mses.push_back(acc / R);
    }
    CHECK(mses[1] < mses[0] / 4.0);
}

TEST_CASE("sum of squared normalized weights") {
    auto eqpop = toy_pop({1, 2, 3, 4}, {1, 1, 1, 1});
    auto eq = ppswr_sample(eqpop, 0, 5, 2);
    CHECK(sum_sq_normalized_weights(eq) == 0.2);  // exact for equal probabilities

    SampleDraws two{{0, 1.0, 0.25}, {1, 2.0, 0.75}};
    // weights 4 and 4/3, normalized (3/4, 1/4)
    CHECK(sum_sq_normalized_weights(two) == doctest::Approx(9.0 / 16 + 1.0 / 16).epsilon(1e-14));

    // Cauchy-Schwarz lower bound 1/n
    auto pop = toy_pop({1, 2, 3, 4, 5}, {2, 1, 1, 3, 1});
    for (std::uint64_t s = 0; s < 10; ++s)
        CHECK(sum_sq_normalized_weights(ppswr_sample(pop, 0, 6, s)) >= 1.0 / 6 - 1e-15);
}

TEST_CASE("design unbiasedness by exhaustive enumeration (N=3, n=2)") {
    auto pop = toy_pop({1, 2, 3}, {1, 2, 3});
    auto designs = enumerate_designs(pop, 0, 2);
    REQUIRE(designs.size() == 9);
    double prob_sum = 0, expect = 0, expect_sq = 0;
    for (const auto& [s, p] : designs) {
        prob_sum += p;
        double hh = hansen_hurwitz_mean(s, 3);
        expect += p * hh;
        expect_sq += p * hh * hh;
    }
    const double Ybar = 2.0;
    CHECK(std::abs(prob_sum - 1.0) <= 1e-12);
    CHECK(std::abs(expect - Ybar) <= 1e-12);
    // enumeration variance vs (1/n) sum p_i (y_i/(N p_i) - Ybar)^2
    double var_formula = 0;
    for (int j = 0; j < 3; ++j) {
        double pj = (j + 1) / 6.0;
        double d = pop.strata[0].values[j] / (3 * pj) - Ybar;
        var_formula += pj * d * d;
    }
    var_formula /= 2.0;
    CHECK(expect_sq - expect * expect == doctest::Approx(var_formula).epsilon(1e-10));
}

TEST_CASE("enumeration basics") {
    auto eq = toy_pop({5, 7}, {1, 1});
    auto designs = enumerate_designs(eq, 0, 2);
    REQUIRE(designs.size() == 4);
    for (const auto& [s, p] : designs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

    auto five = toy_pop({1, 2, 3, 4, 5}, {2, 1, 1, 3, 1});
    auto d5 = enumerate_designs(five, 0, 3);
    double sum = 0;
    for (const auto& [s, p] : d5) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("design consistency: empirical MSE_d of the HH mean scales like 1/n") {
    auto pop = generate_population(1, 60, 50, 1, 1, 2024);
    double Ybar = pop.strata[0].mean();
    std::vector<int> ns{10, 40, 160};
    std::vector<double> mses;
    for (int n : ns) {
        double acc = 0;
        const int R = 10000;
        for (int r = 0; r < R; ++r) {
            auto draws = ppswr_sample(pop, 0, n, derive_seed(888, r, n));
            double hh = hansen_hurwitz_mean(draws, 60);
            acc += (hh - Ybar) * (hh - Ybar);
        }
        mses.push_back(acc / R);
    }
    double slope = (std::log(mses.back()) - std::log(mses.front())) /
                   (std::log(double(ns.back())) - std::log(double(ns.front())));
    CHECK(slope == doctest::Approx(-1.0).epsilon(0.15));
}

TEST_CASE("ppswr is deterministic given seed") {
    auto pop = generate_population(2, 30, 50, 1, 1, 4);
    auto a = ppswr_sample(pop, 1, 20, 99);
    auto b = ppswr_sample(pop, 1, 20, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].unit == b[k].unit);
        CHECK(a[k].value == b[k].value);
    }
}
