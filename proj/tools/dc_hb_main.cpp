#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dchb/harness.hpp"
#include "dchb/nested_gibbs.hpp"
#include "dchb/posterior_limit.hpp"
#include "dchb/stratified.hpp"
#include "dchb/survey.hpp"
#include "dchb/uncertainty.hpp"

namespace {

using namespace dchb;

int cmd_simulate(const std::string& config_path, const std::string& out_override) {
    std::ifstream in(config_path);
    if (!in) {
        std::cerr << "cannot open config file: " << config_path << "\n";
        return 1;
    }
    auto cfg = parse_config(in);
    if (!out_override.empty()) cfg.output_prefix = out_override;
    auto res = run_simulation(cfg, true);

    std::ofstream table(cfg.output_prefix + "_table.csv");
    write_table_csv(res, table);
    std::ofstream longf(cfg.output_prefix + "_long.csv");
    write_long_csv(res, longf);
    std::ofstream manifest(cfg.output_prefix + "_manifest.txt");
    write_manifest(res, manifest);
    if (!table || !longf || !manifest) {
        std::cerr << "failed writing outputs under prefix " << cfg.output_prefix << "\n";
        return 1;
    }

    std::cout.precision(6);
    std::cout << "n,sigma_e,arb1,arb2,arb3,arrmse1,arrmse2,arrmse3,used,excluded\n";
    for (const auto& c : res.cells) {
        std::cout << c.n << ',' << c.sigma_e;
        for (int k = 0; k < 3; ++k) std::cout << ',' << c.arb[k];
        for (int k = 0; k < 3; ++k) std::cout << ',' << c.arrmse[k];
        std::cout << ',' << c.used << ',' << c.excluded << "\n";
    }
    std::cout << "wrote " << cfg.output_prefix << "_table.csv, _long.csv, _manifest.txt\n";
    return 0;
}

// stratum-m data with exact mean yb and positive spread, for the stratified
// sweep populations
StratumData spread_stratum(long long N, int n, double yb, double half_spread) {
    StratumData d{N, std::vector<double>(n, yb)};
    for (int j = 0; j + 1 < n; j += 2) {
        d.y[j] += half_spread;
        d.y[j + 1] -= half_spread;
    }
    return d;
}

int cmd_limits(bool stratified) {
    std::cout.precision(12);
    if (!stratified) {
        std::cout << "model,n,posterior_mean,limit_C,abs_error\n";
        PriorSpec prior;
        prior.r = 1.0;
        struct Row {
            ExpFamModel model;
            double ybar;
        };
        std::vector<Row> cases{{ExpFamModel::gaussian(1.0), 1.0},
                               {ExpFamModel::bernoulli(), 0.3},
                               {ExpFamModel::poisson(), 2.0}};
        for (const auto& c : cases) {
            auto rows = convergence_sweep(c.model, LinkSpec::identity(), prior, c.ybar,
                                          {10, 100, 1000});
            for (const auto& r : rows)
                std::cout << r.model << ',' << r.n << ',' << r.posterior_mean << ','
                          << r.limit_C << ',' << r.abs_error << "\n";
        }
        return 0;
    }

    std::cout << "case,m,n_m,posterior_mean,ybar_m,abs_error\n";
    for (int nm : {5, 20, 80}) {
        StratifiedSample s;
        s.strata.push_back(spread_stratum(1000, 6, 0.8, 0.4));
        s.strata.push_back(spread_stratum(1000, nm, 1.3, 0.5));
        CaseIConfig cfg;
        double pm = case_i_posterior_mean(ExpFamModel::gaussian(1.0), LinkSpec::identity(), s,
                                          cfg);
        std::cout << "i,2," << nm << ',' << pm << ',' << s.ybar(1) << ','
                  << std::abs(pm - s.ybar(1)) << "\n";
    }
    for (int nm : {20, 80}) {
        StratifiedSample s;
        s.strata.push_back(spread_stratum(1000, 4, 0.8, 0.4));
        s.strata.push_back(spread_stratum(1000, nm, 1.3, 0.5));
        double pm = case_ii_posterior_mean(s, 1.0, 1.0, CaseIIMethod::grid);
        std::cout << "ii,2," << nm << ',' << pm << ',' << s.ybar(1) << ','
                  << std::abs(pm - s.ybar(1)) << "\n";
    }
    return 0;
}

int cmd_estimate(const std::string& data_path, int total_draws, int burn_in,
                 std::uint64_t seed, long long N) {
    std::ifstream in(data_path);
    if (!in) {
        std::cerr << "cannot open data file: " << data_path << "\n";
        return 1;
    }
    std::string line;
    if (!std::getline(in, line) || detail::trim(line) != "stratum,value") {
        std::cerr << "expected CSV header: stratum,value\n";
        return 1;
    }
    std::map<int, std::vector<double>> groups;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) {
            std::cerr << "line " << lineno << ": expected stratum,value\n";
            return 1;
        }
        groups[std::stoi(line.substr(0, comma))].push_back(std::stod(line.substr(comma + 1)));
    }
    StratifiedSample sample;
    std::vector<int> labels;
    for (auto& [label, ys] : groups) {
        labels.push_back(label);
        sample.strata.push_back({std::max<long long>(N, static_cast<long long>(ys.size())),
                                 std::move(ys)});
    }
    ChainConfig chain;
    chain.total_draws = total_draws;
    chain.burn_in = burn_in;
    chain.seed = seed;
    auto post = gibbs_run(sample, chain);

    std::cout.precision(12);
    std::cout << "stratum,n,ybar,theta_mean,theta_var,theta_mcse,pop_mean,pop_var,"
                 "sigma_e2_mean,sigma_v2_mean\n";
    for (int i = 0; i < sample.m(); ++i) {
        auto pm = population_mean_posterior(post, sample, i);
        std::cout << labels[i] << ',' << sample.n(i) << ',' << sample.ybar(i) << ','
                  << post.theta_mean[i] << ',' << post.theta_var[i] << ','
                  << post.theta_mcse[i] << ',' << pm.first << ',' << pm.second << ','
                  << post.sigma_e2_mean << ',' << post.sigma_v2_mean << "\n";
    }
    return 0;
}

bool report(const char* name, bool ok) {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "\n";
    return ok;
}

bool verify_design() {
    bool ok = true;
    {
        FinitePopulation pop;
        PopulationStratum st;
        st.values = {1, 2, 3};
        st.sizes = {1, 2, 3};
        st.finalize();
        pop.strata.push_back(st);
        double expect = 0, prob = 0;
        for (const auto& [s, p] : enumerate_designs(pop, 0, 2)) {
            prob += p;
            expect += p * hansen_hurwitz_mean(s, 3);
        }
        ok &= report("weighted-mean design-unbiasedness, enumerated N=3 n=2",
                     std::abs(prob - 1.0) <= 1e-12 && std::abs(expect - 2.0) <= 1e-12);
    }
    {
        auto pop = generate_population(1, 60, 50, 1, 1, 77);
        double Ybar = pop.strata[0].mean();
        std::vector<int> ns{10, 40, 160};
        std::vector<double> mses;
        for (int n : ns) {
            double acc = 0;
            const int R = 4000;
            for (int r = 0; r < R; ++r) {
                auto draws = ppswr_sample(pop, 0, n, derive_seed(5, r, n));
                double hh = hansen_hurwitz_mean(draws, 60);
                acc += (hh - Ybar) * (hh - Ybar);
            }
            mses.push_back(acc / R);
        }
        double slope = (std::log(mses.back()) - std::log(mses.front())) /
                       (std::log(160.0) - std::log(10.0));
        ok &= report("empirical MSE of the weighted mean scales like 1/n",
                     std::abs(slope + 1.0) <= 0.15);
    }
    {
        FinitePopulation pop;
        PopulationStratum st;
        st.values = {4, 8, 6, 2};
        st.sizes = {1, 1, 1, 1};
        st.finalize();
        pop.strata.push_back(st);
        auto draws = ppswr_sample(pop, 0, 9, 11);
        double mean = 0;
        for (const auto& d : draws) mean += d.value;
        mean /= draws.size();
        ok &= report("self-weighting design collapses to the sample mean exactly",
                     hansen_hurwitz_mean(draws, 4) == mean);
    }
    return ok;
}

bool verify_oracles() {
    bool ok = true;
    {
        PriorSpec flat;
        bool pass = true;
        SinglePopSample bern{10, 0.3, 1000};
        pass &= std::abs(posterior_mean_psi_prime(ExpFamModel::bernoulli(),
                                                  LinkSpec::identity(), flat, bern) -
                         0.3) <= 1e-8;
        SinglePopSample pois{10, 2.0, 1000};
        pass &= std::abs(posterior_mean_psi_prime(ExpFamModel::poisson(),
                                                  LinkSpec::identity(), flat, pois) -
                         2.0) <= 1e-8;
        ok &= report("flat-prior posterior means equal the sample mean", pass);
    }
    {
        bool pass = true;
        for (int n : {5, 50}) {
            for (double yb : {-1.0, 0.5, 3.0}) {
                PriorSpec prior;
                prior.beta = 1.0;
                prior.r = 2.0;
                SinglePopSample s{n, yb, 1000};
                double got = posterior_mean_psi_prime(ExpFamModel::gaussian(1.0),
                                                      LinkSpec::identity(), prior, s);
                // theta ~ N(beta, 1/r), ybar | theta ~ N(theta, 1/n)
                double want = (n * yb + prior.r * prior.beta) / (n + prior.r);
                pass &= std::abs(got - want) <= 1e-8;
            }
        }
        ok &= report("normal-model quadrature matches the conjugate closed form", pass);
    }
    {
        Rng gen(3);
        StratifiedSample s;
        for (int i = 0; i < 5; ++i) {
            StratumData d{1000, {}};
            double v = gen.normal();
            for (int j = 0; j < 4; ++j) d.y.push_back(10 + v + gen.normal());
            s.strata.push_back(std::move(d));
        }
        auto vc = reml_fit(s);
        double msw = s.rss_within() / (s.n_total() - s.m());
        double gm = 0;
        for (int i = 0; i < 5; ++i) gm += s.ybar(i);
        gm /= 5;
        double msb = 0;
        for (int i = 0; i < 5; ++i) msb += 4.0 * (s.ybar(i) - gm) * (s.ybar(i) - gm);
        msb /= 4;
        double sv2 = std::max((msb - msw) / 4.0, 0.0);
        bool pass = vc.converged && std::abs(vc.sigma_e2 - msw) <= 1e-6 &&
                    std::abs(vc.sigma_v2 - sv2) <= 1e-6;
        ok &= report("balanced variance-component fit matches the ANOVA closed form", pass);
    }
    {
        Rng gen(12);
        StratifiedSample s;
        for (int i = 0; i < 4; ++i) {
            StratumData d{1000, {}};
            double v = gen.normal();
            for (int j = 0; j < 6; ++j) d.y.push_back(v + 1.5 * gen.normal());
            s.strata.push_back(std::move(d));
        }
        ChainConfig cfg;
        cfg.total_draws = 22000;
        cfg.burn_in = 2000;
        cfg.seed = 8;
        cfg.fix_sigma_v2 = 1.0;
        cfg.fix_sigma_e2 = 2.25;
        auto sum = gibbs_run(s, cfg);
        double sum_phi = 0, muhat = 0;
        for (int i = 0; i < 4; ++i) {
            double phi = 1.0 / (1.0 + 2.25 / s.n(i));
            sum_phi += phi;
            muhat += phi * s.ybar(i);
        }
        muhat /= sum_phi;
        bool pass = true;
        for (int i = 0; i < 4; ++i) {
            double g = 1.0 / (1.0 + 2.25 / s.n(i));
            double want = g * s.ybar(i) + (1 - g) * muhat;
            pass &= std::abs(sum.theta_mean[i] - want) <= 3.0 * sum.theta_mcse[i];
        }
        ok &= report("fixed-variance sampler matches the conjugate posterior", pass);
    }
    {
        double got = tail_ratio_check(2, 1.0, 1.0);
        auto F = [](double x) {
            return x / (2 * (2 * x * x + 1)) + std::atan(std::sqrt(2.0) * x) / (2 * std::sqrt(2.0));
        };
        double want = 1.0 - F(1.0) / (3.14159265358979323846 / (4 * std::sqrt(2.0)));
        ok &= report("polynomial tail-mass ratio matches the n=2 closed form",
                     std::abs(got - want) <= 1e-8);
    }
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical Bayes finite-population estimation with design-consistent "
                 "corrections"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "run the Monte Carlo study from a config file");
    std::string config_path, out_override;
    sim->add_option("--config", config_path, "key = value config file")->required();
    sim->add_option("--out", out_override, "output path prefix (overrides config)");

    auto* lim = app.add_subcommand("limits", "emit posterior-mean convergence sweeps as CSV");
    bool stratified = false;
    lim->add_flag("--stratified", stratified, "two-stratum sweeps instead of single-population");

    auto* est = app.add_subcommand("estimate", "fit the hierarchical model to a stratum,value CSV");
    std::string data_path;
    int total_draws = 1050, burn_in = 50;
    std::uint64_t seed = 1;
    long long N = 1000000;
    est->add_option("--data", data_path, "CSV with header stratum,value")->required();
    est->add_option("--total-draws", total_draws, "MCMC draws including burn-in");
    est->add_option("--burn-in", burn_in, "discarded draws");
    est->add_option("--seed", seed, "chain seed");
    est->add_option("--N", N, "population size per stratum");

    auto* ver = app.add_subcommand("verify", "run built-in invariant checks");
    bool only_design = false, only_oracles = false;
    ver->add_flag("--design", only_design, "design-based checks only");
    ver->add_flag("--oracles", only_oracles, "estimation oracle checks only");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) return cmd_simulate(config_path, out_override);
        if (*lim) return cmd_limits(stratified);
        if (*est) return cmd_estimate(data_path, total_draws, burn_in, seed, N);
        if (*ver) {
            bool ok = true;
            if (only_design || !only_oracles) ok &= verify_design();
            if (only_oracles || !only_design) ok &= verify_oracles();
            std::cout << (ok ? "all checks passed\n" : "checks failed\n");
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
