#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>
#include <vector>

#include "dchb/rng.hpp"
#include "dchb/uncertainty.hpp"

using namespace dchb;

namespace {

StratifiedSample make_sample(Rng& rng, std::vector<int> ns, double mu, double sv, double se,
                             long long N = 1000) {
    StratifiedSample s;
    for (int n : ns) {
        StratumData d{N, {}};
        double v = sv > 0 ? rng.normal(0, sv) : 0.0;
        for (int j = 0; j < n; ++j) d.y.push_back(mu + v + rng.normal(0, se));
        s.strata.push_back(std::move(d));
    }
    return s;
}

// Monte Carlo estimate of E[(etahat^B - theta_m)^2] with known variance
// components and mu estimated by its weighted mean; the independent oracle
// for the h1m formula.
std::pair<double, double> h1m_mc(const std::vector<int>& ns, double sv2, double se2, int target,
                                 long long draws, std::uint64_t seed) {
    const int m = static_cast<int>(ns.size());
    std::vector<double> phi(m);
    double sum_phi = 0;
    for (int i = 0; i < m; ++i) {
        phi[i] = 1.0 / (sv2 + se2 / ns[i]);
        sum_phi += phi[i];
    }
    double g = sv2 / (sv2 + se2 / ns[target]);
    Rng rng(seed);
    double acc = 0, acc2 = 0;
    for (long long r = 0; r < draws; ++r) {
        double muhat_num = 0, theta_t = 0, yb_t = 0;
        for (int i = 0; i < m; ++i) {
            double v = std::sqrt(sv2) * rng.normal();
            double yb = v + std::sqrt(se2 / ns[i]) * rng.normal();
            muhat_num += phi[i] * yb;
            if (i == target) {
                theta_t = v;
                yb_t = yb;
            }
        }
        double muhat = muhat_num / sum_phi;
        double err = g * yb_t + (1 - g) * muhat - theta_t;
        acc += err * err;
        acc2 += err * err * err * err;
    }
    double mean = acc / draws;
    double var = acc2 / draws - mean * mean;
    return {mean, std::sqrt(var / draws)};
}

double anova_msw(const StratifiedSample& s) { return s.rss_within() / (s.n_total() - s.m()); }

}  // namespace

TEST_CASE("REML on balanced data matches the ANOVA closed form to 1e-6") {
    Rng gen(101);
    for (int rep = 0; rep < 10; ++rep) {
        auto s = make_sample(gen, {4, 4, 4, 4, 4}, 10.0, 1.0, 1.5);
        auto vc = reml_fit(s);
        double msw = anova_msw(s);
        double gm = 0;
        for (int i = 0; i < 5; ++i) gm += s.ybar(i);
        gm /= 5;
        double msb = 0;
        for (int i = 0; i < 5; ++i) msb += 4.0 * (s.ybar(i) - gm) * (s.ybar(i) - gm);
        msb /= 4;
        double sv2 = std::max((msb - msw) / 4.0, 0.0);
        CHECK(vc.converged);
        CHECK(vc.sigma_e2 == doctest::Approx(sv2 > 0 ? msw : vc.sigma_e2).epsilon(1e-6));
        if (sv2 > 0) {
            CHECK(vc.sigma_v2 == doctest::Approx(sv2).epsilon(1e-6));
            CHECK(vc.mu_hat == doctest::Approx(gm).epsilon(1e-9));
        } else {
            CHECK(vc.sigma_v2 == 0.0);
        }
    }
}

TEST_CASE("REML boundary: equal stratum means give sigma_v2 = 0") {
    StratifiedSample s{{{100, {1.0, 3.0}}, {100, {0.0, 4.0}}, {100, {1.5, 2.5}}}};
    // all ybar_i = 2
    auto vc = reml_fit(s);
    CHECK(vc.sigma_v2 == 0.0);
    CHECK(vc.boundary);
    CHECK(vc.sigma_e2 > 0);
    CHECK(vc.mu_hat == doctest::Approx(2.0));
}

TEST_CASE("REML on unbalanced data beats a dense grid") {
    Rng gen(55);
    auto s = make_sample(gen, {2, 5, 9}, 0.0, 1.0, 1.0);
    auto vc = reml_fit(s);
    auto d = detail::reml_data(s);
    double best = detail::reml_neg2(d, vc.sigma_v2, std::max(vc.sigma_e2, 1e-12));
    for (int i = 0; i < 100; ++i) {
        for (int j = 0; j < 100; ++j) {
            double sv2 = 0.001 + 0.05 * i;
            double se2 = 0.01 + 0.05 * j;
            CHECK(detail::reml_neg2(d, sv2, se2) >= best - 1e-9);
        }
    }
    if (vc.sigma_v2 > 0) {
        auto [gv, ge] = detail::reml_grad(d, vc.sigma_v2, vc.sigma_e2);
        CHECK(std::hypot(gv * vc.sigma_v2, ge * vc.sigma_e2) < 1e-8);
    }
}

TEST_CASE("EBLUP limits and hand arithmetic") {
    StratifiedSample s{{{100, {1.0}}, {100, {2.0}}, {100, {3.0}}}};
    SUBCASE("sigma_v2 = 0 gives full pooling") {
        VarianceComponents vc{2.0, 0.0, 1.0, true, true, 0};
        for (int i = 0; i < 3; ++i) CHECK(eblup_eta(s, vc, i) == doctest::Approx(2.0));
    }
    SUBCASE("sigma_e2 -> 0 gives no pooling") {
        VarianceComponents vc{2.0, 1.0, 1e-10, true, false, 0};
        CHECK(eblup_eta(s, vc, 0) == doctest::Approx(1.0).epsilon(1e-8));
    }
    SUBCASE("gamma = 0.5 midpoint case") {
        VarianceComponents vc{2.0, 1.0, 1.0, true, false, 0};
        CHECK(shrinkage_gamma(vc, 1) == doctest::Approx(0.5));
        CHECK(eblup_eta(s, vc, 2) == doctest::Approx(2.5));
    }
    SUBCASE("convex combination stays within the range of stratum means") {
        Rng gen(9);
        auto r = make_sample(gen, {3, 4, 5, 6}, 5.0, 2.0, 1.0);
        auto vc = reml_fit(r);
        double lo = 1e300, hi = -1e300;
        for (int i = 0; i < 4; ++i) {
            lo = std::min(lo, r.ybar(i));
            hi = std::max(hi, r.ybar(i));
        }
        for (int i = 0; i < 4; ++i) {
            double e = eblup_eta(r, vc, i);
            CHECK(e >= lo - 1e-12);
            CHECK(e <= hi + 1e-12);
        }
    }
}

TEST_CASE("h1m formula agrees with the Monte Carlo oracle (5 settings, 1e6 draws)") {
    struct Setting {
        std::vector<int> ns;
        double sv2, se2;
        int target;
    };
    std::vector<Setting> settings{
        {{1, 1, 1}, 1.0, 1.0, 2},
        {{2, 5, 9}, 1.0, 2.0, 0},
        {{10, 10, 10, 10}, 0.5, 1.0, 1},
        {{4, 8}, 2.0, 0.5, 1},
        {{3, 3, 3, 3, 3}, 0.25, 4.0, 4},
    };
    int k = 0;
    for (const auto& st : settings) {
        StratifiedSample s;
        for (int n : st.ns) s.strata.push_back({1000, std::vector<double>(n, 0.0)});
        VarianceComponents vc{0.0, st.sv2, st.se2, true, false, 0};
        double formula = h1m(vc, s, st.target);
        auto [mc, mcse] = h1m_mc(st.ns, st.sv2, st.se2, st.target, 1000000, 7000 + k);
        CAPTURE(k);
        CHECK(std::abs(formula - mc) <= 3.0 * mcse);
        ++k;
    }
}

TEST_CASE("h1m special values and monotonicity") {
    SUBCASE("balanced n=1, sv2=se2=1: 0.5 + 0.25/1.5") {
        StratifiedSample s{{{100, {0.0}}, {100, {0.0}}, {100, {0.0}}}};
        VarianceComponents vc{0.0, 1.0, 1.0, true, false, 0};
        CHECK(h1m(vc, s, 0) == doctest::Approx(0.5 + 0.25 / 1.5).epsilon(1e-12));
    }
    SUBCASE("sigma_v2 = 0 reduces to the variance of muhat") {
        StratifiedSample s{{{100, std::vector<double>(2, 0.0)},
                            {100, std::vector<double>(5, 0.0)},
                            {100, std::vector<double>(9, 0.0)}}};
        VarianceComponents vc{0.0, 0.0, 2.0, true, true, 0};
        double sum_phi = (2 + 5 + 9) / 2.0;
        CHECK(h1m(vc, s, 1) == doctest::Approx(1.0 / sum_phi).epsilon(1e-12));
    }
    SUBCASE("decreasing in n_m, fixed other strata (formula and MC)") {
        double prev_formula = 1e300, prev_mc = 1e300;
        for (int nm : {2, 8, 32}) {
            StratifiedSample s{{{1000, std::vector<double>(double(nm), 0.0)},
                                {1000, std::vector<double>(4, 0.0)},
                                {1000, std::vector<double>(4, 0.0)}}};
            VarianceComponents vc{0.0, 1.0, 1.5, true, false, 0};
            double f = h1m(vc, s, 0);
            auto [mc, mcse] = h1m_mc({nm, 4, 4}, 1.0, 1.5, 0, 200000, 31 + nm);
            CHECK(std::abs(f - mc) <= 3.5 * mcse);
            CHECK(f < prev_formula);
            CHECK(mc < prev_mc);
            prev_formula = f;
            prev_mc = mc;
        }
    }
    SUBCASE("mu-term toggle removes the second summand") {
        StratifiedSample s{{{100, {0.0}}, {100, {0.0}}, {100, {0.0}}}};
        VarianceComponents vc{0.0, 1.0, 1.0, true, false, 0};
        CHECK(h1m(vc, s, 0, false) == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("mu1 / mu2 / mu3 arithmetic") {
    CHECK(mu1(0.5, 1.2, 1.2) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mu1(0.5, 1.4, 1.2) == doctest::Approx(0.54).epsilon(1e-12));
    CHECK_THROWS_AS(mu1(-0.1, 0, 0), std::invalid_argument);

    StratifiedSample s{{{100, {1.0}}, {100, {2.0}}, {100, {3.0}}}};
    VarianceComponents vc{2.0, 1.0, 1.0, true, false, 0};
    double h = h1m(vc, s, 2);
    CHECK(mu2(s, vc, eblup_eta(s, vc, 2), 2) == doctest::Approx(h).epsilon(1e-12));
    CHECK(mu2(s, vc, eblup_eta(s, vc, 2) + 0.1, 2) == doctest::Approx(h + 0.01).epsilon(1e-10));

    CHECK(mu3(0.54, 0.6767) == doctest::Approx(0.60835).epsilon(1e-12));
    CHECK(mu3(0.3, 0.3) == 0.3);
    Rng gen(4);
    for (int k = 0; k < 50; ++k) {
        double a = gen.uniform(), b = gen.uniform();
        double m3 = mu3(a, b);
        CHECK(m3 >= std::min(a, b));
        CHECK(m3 <= std::max(a, b));
        CHECK(m3 == doctest::Approx(0.5 * (a + b)).epsilon(1e-15));
    }
}

TEST_CASE("survey-weighted predictor reduces to the plain one under equal weights") {
    VarianceComponents vc{0.0, 1.3, 0.8, true, false, 0};
    StratifiedSample s{{{100, {1.0, 1.4}}, {100, {2.0, 2.2, 2.4}}, {100, {3.0}}}};
    std::vector<WeightedStratumSummary> ws;
    for (int i = 0; i < 3; ++i) ws.push_back({s.ybar(i), 1.0 / s.n(i)});
    for (int i = 0; i < 3; ++i) {
        CHECK(pseudo_gamma(vc, ws[i].delta2) ==
              doctest::Approx(shrinkage_gamma(vc, s.n(i))).epsilon(1e-14));
        CHECK(pseudo_eblup(vc, ws, i) == doctest::Approx(eblup_eta(s, vc, i)).epsilon(1e-14));
        CHECK(pseudo_h1m(vc, ws, i) == doctest::Approx(h1m(vc, s, i)).epsilon(1e-14));
        CHECK(pseudo_mu2(vc, ws, 5.0, i) == doctest::Approx(mu2(s, vc, 5.0, i)).epsilon(1e-12));
    }
}

TEST_CASE("survey-weighted prediction variance grows with the weight dispersion") {
    VarianceComponents vc{0.0, 1.0, 2.0, true, false, 0};
    std::vector<WeightedStratumSummary> ws{{1.0, 0.1}, {2.0, 0.1}, {3.0, 0.1}};
    double prev = 0;
    for (double d2 : {0.1, 0.25, 0.5, 0.9}) {
        ws[1].delta2 = d2;
        double h = pseudo_h1m(vc, ws, 1);
        CHECK(h > prev);
        prev = h;
    }
    // h2 part vanishes at the predictor itself
    ws[1].delta2 = 0.3;
    double at_pred = pseudo_mu2(vc, ws, pseudo_eblup(vc, ws, 1), 1);
    CHECK(at_pred == doctest::Approx(pseudo_h1m(vc, ws, 1)).epsilon(1e-12));
}

TEST_CASE("report invariants and CSV header") {
    UncertaintyReport rep;
    rep.rows.push_back({0, 1.2, 1.25, 0.5, 0.5025, 0.4, 0.01, 0.41, 0.45625, 0.5, 1.2});
    rep.validate();
    std::ostringstream os;
    rep.write_csv(os);
    auto text = os.str();
    CHECK(text.substr(0, text.find('\n')) ==
          "stratum,yhat_hb,yhat_dc,postvar,mu1,h1m,h2m_hat,mu2,mu3");

    UncertaintyReport bad = rep;
    bad.rows[0].mu3 = 0.9;
    CHECK_THROWS_AS(bad.validate(), std::logic_error);
}
