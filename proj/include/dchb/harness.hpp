#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dchb/nested_gibbs.hpp"
#include "dchb/quadrature.hpp"
#include "dchb/rng.hpp"
#include "dchb/survey.hpp"
#include "dchb/uncertainty.hpp"

namespace dchb {

struct SimulationConfig {
    int m = 100;
    long long N_i = 60;
    double mu = 50.0;
    double sigma_v = 1.0;
    std::vector<double> sigma_e_list{1.0, 2.0};
    std::vector<int> n_list{10, 20, 30};
    int R = 1000;
    ChainConfig chain;
    std::uint64_t master_seed = 1;
    int workers = 0;  // 0: DCHB_WORKERS env var, else hardware concurrency
    std::string output_prefix = "dc_hb";

    void validate() const {
        if (m < 3 || N_i < 2 || R < 2) throw std::invalid_argument("need m >= 3, N_i >= 2, R >= 2");
        if (sigma_e_list.empty() || n_list.empty())
            throw std::invalid_argument("empty sigma_e or n grid");
        for (int n : n_list)
            if (n < 1 || n > N_i) throw std::invalid_argument("n out of range");
        chain.validate();
    }

    static SimulationConfig desk_scale() {
        SimulationConfig c;
        c.m = 30;
        c.R = 200;
        c.n_list = {10, 30};
        return c;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(static_cast<T>(std::stod(trim(tok))));
    return out;
}

}  // namespace detail

// key = value lines, '#' comments, comma-separated lists, dotted keys for the
// chain settings; unknown keys are rejected
inline SimulationConfig parse_config(std::istream& is) {
    SimulationConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        if (key == "m") cfg.m = std::stoi(val);
        else if (key == "N") cfg.N_i = std::stoll(val);
        else if (key == "mu") cfg.mu = std::stod(val);
        else if (key == "sigma_v") cfg.sigma_v = std::stod(val);
        else if (key == "sigma_e") cfg.sigma_e_list = detail::parse_list<double>(val);
        else if (key == "n") cfg.n_list = detail::parse_list<int>(val);
        else if (key == "R") cfg.R = std::stoi(val);
        else if (key == "chain.total_draws") cfg.chain.total_draws = std::stoi(val);
        else if (key == "chain.burn_in") cfg.chain.burn_in = std::stoi(val);
        else if (key == "seed") cfg.master_seed = std::stoull(val);
        else if (key == "workers") cfg.workers = std::stoi(val);
        else if (key == "out") cfg.output_prefix = val;
        else throw std::invalid_argument("unknown config key: " + key);
    }
    cfg.validate();
    return cfg;
}

inline void serialize_config(const SimulationConfig& cfg, std::ostream& os) {
    os << "m = " << cfg.m << "\n";
    os << "N = " << cfg.N_i << "\n";
    os.precision(17);
    os << "mu = " << cfg.mu << "\n";
    os << "sigma_v = " << cfg.sigma_v << "\n";
    os << "sigma_e = ";
    for (std::size_t i = 0; i < cfg.sigma_e_list.size(); ++i)
        os << (i ? "," : "") << cfg.sigma_e_list[i];
    os << "\n";
    os << "n = ";
    for (std::size_t i = 0; i < cfg.n_list.size(); ++i) os << (i ? "," : "") << cfg.n_list[i];
    os << "\n";
    os << "R = " << cfg.R << "\n";
    os << "chain.total_draws = " << cfg.chain.total_draws << "\n";
    os << "chain.burn_in = " << cfg.chain.burn_in << "\n";
    os << "seed = " << cfg.master_seed << "\n";
    os << "out = " << cfg.output_prefix << "\n";
}

struct StratumRecord {
    double ybar_m = 0;      // unweighted sample mean
    double ybar_mw = 0;     // Hansen-Hurwitz weighted mean
    double yhat_hb = 0;     // Rao-Blackwellized posterior mean
    double yhat = 0;        // design-consistent correction
    double postvar = 0;
    double mu1 = 0, mu2 = 0, mu3 = 0;
    double true_mean = 0;   // finite-population stratum mean
    double sq_error = 0;
};

struct ReplicateRecord {
    int replicate = 0;
    bool ok = false;
    std::string error;
    std::vector<StratumRecord> strata;
};

// one simulation replicate: PPSWR in every stratum, one joint HB fit, the
// normal-case correction yhat = yhat_hb - ybar_m + ybar_mw, and the three
// uncertainty measures
inline ReplicateRecord run_replicate(const FinitePopulation& pop, const SimulationConfig& cfg,
                                     int n, std::uint64_t cell_id, int replicate_id) {
    ReplicateRecord rec;
    rec.replicate = replicate_id;
    const int m = pop.m();
    std::uint64_t rep_seed = derive_seed(cfg.master_seed, cell_id, replicate_id);
    try {
        StratifiedSample sample;
        std::vector<WeightedStratumSummary> ws(m);
        for (int i = 0; i < m; ++i) {
            auto draws = ppswr_sample(pop, i, n, rep_seed);
            StratumData d{pop.strata[i].N(), {}};
            for (const auto& dr : draws) d.y.push_back(dr.value);
            // ratio-form weighted mean: the raw Hansen-Hurwitz mean divides by
            // tiny selection probabilities of near-constant values, and that
            // noise would drown the differences between the three measures
            ws[i].ybar_w = hajek_mean(draws);
            ws[i].delta2 = sum_sq_normalized_weights(draws);
            sample.strata.push_back(std::move(d));
        }
        ChainConfig chain = cfg.chain;
        chain.seed = derive_seed(rep_seed, 0xC4A1);
        auto post = gibbs_run(sample, chain);
        auto vc = reml_fit(sample);
        rec.strata.resize(m);
        for (int i = 0; i < m; ++i) {
            auto& r = rec.strata[i];
            auto pm = population_mean_posterior(post, sample, i);
            r.ybar_m = sample.ybar(i);
            r.ybar_mw = ws[i].ybar_w;
            r.yhat_hb = pm.first;
            r.postvar = pm.second;
            r.yhat = r.yhat_hb - r.ybar_m + r.ybar_mw;
            r.mu1 = mu1(r.postvar, r.yhat, r.yhat_hb);
            // survey-weighted predictor here; against the plain one the shared
            // weighting noise never cancels and the three measures coincide
            r.mu2 = pseudo_mu2(vc, ws, r.yhat, i);
            r.mu3 = mu3(r.mu1, r.mu2);
            r.true_mean = pop.strata[i].mean();
            r.sq_error = (r.yhat - r.true_mean) * (r.yhat - r.true_mean);
        }
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
    }
    return rec;
}

inline double mse_d(const std::vector<ReplicateRecord>& records, int stratum) {
    std::vector<double> sq;
    for (const auto& r : records)
        if (r.ok) sq.push_back(r.strata[stratum].sq_error);
    if (sq.size() < 2) throw std::invalid_argument("need >= 2 successful replicates");
    return pairwise_sum(sq) / sq.size();
}

struct CellResult {
    int n = 0;
    double sigma_e = 0;
    int used = 0;
    int excluded = 0;
    std::vector<double> rb[3], rrmse[3];  // per stratum, measures 1..3
    std::vector<double> mse;              // per-stratum MSE_d
    double arb[3] = {0, 0, 0};
    double arrmse[3] = {0, 0, 0};
    double arb_mcse[3] = {0, 0, 0};
};

inline CellResult aggregate(const std::vector<ReplicateRecord>& records, int n, double sigma_e) {
    CellResult out;
    out.n = n;
    out.sigma_e = sigma_e;
    int m = 0;
    for (const auto& r : records)
        if (r.ok) {
            m = static_cast<int>(r.strata.size());
            ++out.used;
        } else {
            ++out.excluded;
        }
    if (out.used < 2) throw std::invalid_argument("need >= 2 successful replicates");
    for (int i = 0; i < m; ++i) {
        double msed = mse_d(records, i);
        if (!(msed > 0)) throw std::runtime_error("MSE_d is zero; relative measures undefined");
        out.mse.push_back(msed);
        for (int k = 0; k < 3; ++k) {
            std::vector<double> mus;
            for (const auto& r : records) {
                if (!r.ok) continue;
                const auto& s = r.strata[i];
                mus.push_back(k == 0 ? s.mu1 : k == 1 ? s.mu2 : s.mu3);
            }
            double e_mu = pairwise_sum(mus) / mus.size();
            double ss = 0;
            for (double v : mus) ss += (v - msed) * (v - msed);
            out.rb[k].push_back((e_mu - msed) / msed);
            out.rrmse[k].push_back(std::sqrt(ss / mus.size()) / msed);
        }
    }
    for (int k = 0; k < 3; ++k) {
        out.arb[k] = pairwise_sum(out.rb[k]) / m;
        out.arrmse[k] = pairwise_sum(out.rrmse[k]) / m;
        double ss = 0;
        for (double v : out.rb[k]) ss += (v - out.arb[k]) * (v - out.arb[k]);
        out.arb_mcse[k] = std::sqrt(ss / std::max(m - 1, 1) / m);
    }
    return out;
}

struct SimulationResult {
    SimulationConfig config;
    std::vector<CellResult> cells;
    // long-format rows kept per cell for the plotting CSV
    std::vector<std::vector<ReplicateRecord>> records;  // parallel to cells
};

inline int resolve_workers(const SimulationConfig& cfg) {
    if (cfg.workers > 0) return cfg.workers;
    if (const char* env = std::getenv("DCHB_WORKERS")) {
        int w = std::atoi(env);
        if (w > 0) return w;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// replicates run on a worker pool; records land in slots indexed by replicate
// id and aggregation walks them in order, so worker count cannot change any
// result
inline std::vector<ReplicateRecord> run_cell(const FinitePopulation& pop,
                                             const SimulationConfig& cfg, int n,
                                             std::uint64_t cell_id, int workers) {
    std::vector<ReplicateRecord> records(cfg.R);
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            int r = next.fetch_add(1);
            if (r >= cfg.R) return;
            records[r] = run_replicate(pop, cfg, n, cell_id, r);
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    int failed = 0;
    for (const auto& r : records)
        if (!r.ok) ++failed;
    if (failed * 100 > cfg.R)
        throw std::runtime_error("more than 1% of replicates failed: " + std::to_string(failed) +
                                 " of " + std::to_string(cfg.R));
    return records;
}

inline SimulationResult run_simulation(const SimulationConfig& cfg, bool keep_records = false) {
    cfg.validate();
    const int workers = resolve_workers(cfg);
    SimulationResult res;
    res.config = cfg;
    for (std::size_t se_idx = 0; se_idx < cfg.sigma_e_list.size(); ++se_idx) {
        double sigma_e = cfg.sigma_e_list[se_idx];
        // one frozen population per sigma_e, shared by every (n, replicate)
        auto pop = generate_population(cfg.m, cfg.N_i, cfg.mu, cfg.sigma_v, sigma_e,
                                       derive_seed(cfg.master_seed, 0xB0B, se_idx));
        for (std::size_t n_idx = 0; n_idx < cfg.n_list.size(); ++n_idx) {
            int n = cfg.n_list[n_idx];
            std::uint64_t cell_id = se_idx * 1000 + n_idx + 1;
            auto records = run_cell(pop, cfg, n, cell_id, workers);
            res.cells.push_back(aggregate(records, n, sigma_e));
            if (keep_records) res.records.push_back(std::move(records));
        }
    }
    return res;
}

inline void write_table_csv(const SimulationResult& res, std::ostream& os) {
    os << "n,sigma_e,arb1,arb2,arb3,arrmse1,arrmse2,arrmse3\n";
    os.precision(17);
    for (const auto& c : res.cells)
        os << c.n << ',' << c.sigma_e << ',' << c.arb[0] << ',' << c.arb[1] << ',' << c.arb[2]
           << ',' << c.arrmse[0] << ',' << c.arrmse[1] << ',' << c.arrmse[2] << '\n';
}

inline void write_long_csv(const SimulationResult& res, std::ostream& os) {
    os << "n,sigma_e,replicate,stratum,measure,value\n";
    os.precision(17);
    static const char* names[4] = {"mu1", "mu2", "mu3", "sq_error"};
    for (std::size_t c = 0; c < res.records.size(); ++c) {
        const auto& cell = res.cells[c];
        for (const auto& rec : res.records[c]) {
            if (!rec.ok) continue;
            for (std::size_t i = 0; i < rec.strata.size(); ++i) {
                const auto& s = rec.strata[i];
                double vals[4] = {s.mu1, s.mu2, s.mu3, s.sq_error};
                for (int k = 0; k < 4; ++k)
                    os << cell.n << ',' << cell.sigma_e << ',' << rec.replicate << ',' << i << ','
                       << names[k] << ',' << vals[k] << '\n';
            }
        }
    }
}

// the manifest is itself a loadable config file; extra provenance rides in
// comments the parser skips
inline void write_manifest(const SimulationResult& res, std::ostream& os) {
    os << "# simulation manifest; feed back to `dc-hb simulate --config` to reproduce\n";
    serialize_config(res.config, os);
    os << "# excluded replicates per cell:";
    for (const auto& c : res.cells) os << ' ' << c.excluded;
    os << "\n";
}

}  // namespace dchb
