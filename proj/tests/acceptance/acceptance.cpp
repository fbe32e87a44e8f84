// Acceptance suite: each criterion prints one [PASS]/[FAIL] line with the
// measured numbers. Invoke with the criterion number (1-9) or "all".

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedsel/advisor.hpp"
#include "fedsel/dataset.hpp"
#include "fedsel/detect.hpp"
#include "fedsel/engine.hpp"
#include "fedsel/rng.hpp"
#include "fedsel/search.hpp"
#include "fedsel/strategies.hpp"
#include "reference.hpp"

using namespace fedsel;
using Clock = std::chrono::steady_clock;

namespace {

// Scenario analogs run on a deliberately hard synthetic task (few informative
// channels, class overlap comparable to noisy sensor data); the generator's
// default separation stays reserved for the learnability gate.
constexpr int kScenarioFeatures = 40;
constexpr double kScenarioSeparation = 1.0;
constexpr int kClients = 4;
const std::vector<int> kArch{kScenarioFeatures, 32, 2};
constexpr int kJobs = 2;

Dataset scenario_dataset(std::uint64_t seed, int n_samples = 1000) {
    return generate_synthetic(n_samples, kScenarioFeatures, 2, derive_seed(seed, "data"),
                              kScenarioSeparation);
}

std::vector<ClientPartition> scenario_partitions(Scenario scenario, std::uint64_t seed) {
    PartitionSpec spec;
    spec.scenario = scenario;
    spec.n_clients = kClients;
    spec.seed = derive_seed(seed, "part");
    return make_partitions(scenario_dataset(seed), spec);
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Criterion {
    bool pass = true;
    std::ostringstream details;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (details.tellp() > 0) details << "; ";
            details << what;
        }
    }
    void note(const std::string& text) {
        if (details.tellp() > 0) details << "; ";
        details << text;
    }
};

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// ---------------------------------------------------------------- criterion 1

Criterion criterion_divergence_math() {
    Criterion c;
    const auto start = Clock::now();

    Rng rng(10001);
    int sym_fail = 0, bound_fail = 0, zero_fail = 0, nonzero_fail = 0;
    for (int i = 0; i < 1000; ++i) {
        const int k = static_cast<int>(rng.uniform_int(2, 10));
        std::vector<double> p(k), q(k);
        double ps = 0.0, qs = 0.0;
        for (int j = 0; j < k; ++j) {
            p[j] = rng.uniform() + 1e-4;
            q[j] = rng.uniform() + 1e-4;
            ps += p[j];
            qs += q[j];
        }
        double linf = 0.0;
        for (int j = 0; j < k; ++j) {
            p[j] /= ps;
            q[j] /= qs;
            linf = std::max(linf, std::abs(p[j] - q[j]));
        }
        const LabelDistribution P{p}, Q{q};
        const double pq = jsd(P, Q);
        if (std::abs(pq - jsd(Q, P)) > 1e-12) ++sym_fail;
        if (pq < -1e-12 || pq > 1.0 + 1e-12) ++bound_fail;
        if (jsd(P, P) > 1e-12) ++zero_fail;
        if (linf > 1e-3 && pq <= 1e-12) ++nonzero_fail;
    }
    c.require(sym_fail == 0, "jsd symmetry violated " + std::to_string(sym_fail) + " times");
    c.require(bound_fail == 0, "jsd bounds violated " + std::to_string(bound_fail) + " times");
    c.require(zero_fail == 0, "jsd(P,P) nonzero " + std::to_string(zero_fail) + " times");
    c.require(nonzero_fail == 0,
              "jsd zero for distinct inputs " + std::to_string(nonzero_fail) + " times");

    // Divergence-score mean identity (sum of per-client means equals
    // 2/(n-1) times the pairwise sum), exact: lattice-valued single-width
    // layers keep every sum and the power-of-two divisions representable.
    int identity_fail = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = (t % 2 == 0) ? 3 : 5;  // n - 1 is a power of two
        const int layers = 1 + static_cast<int>(rng.uniform_int(0, 2));
        std::vector<ModelParams> params(n);
        for (ModelParams& mp : params) {
            for (int l = 0; l < layers; ++l) {
                mp.layers.push_back(
                    {static_cast<double>(rng.uniform_int(-8192, 8192)) / 1024.0});
            }
        }
        const std::vector<double> div = divergence_scores(params);
        double lhs = 0.0;
        for (double v : div) lhs += v;
        double pair_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double d = 0.0;
                for (int l = 0; l < layers; ++l) {
                    d += std::abs(params[i].layers[static_cast<std::size_t>(l)][0] -
                                  params[j].layers[static_cast<std::size_t>(l)][0]);
                }
                pair_sum += d;
            }
        }
        const double rhs = 2.0 / static_cast<double>(n - 1) * pair_sum;
        if (lhs != rhs) ++identity_fail;
    }
    c.require(identity_fail == 0,
              "divergence mean identity inexact on " + std::to_string(identity_fail) + "/100 sets");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 5.0, "runtime " + fmt(elapsed) + "s exceeds 5s");
    c.note("1000 jsd pairs, 100 exact identity sets, " + fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 2

Criterion criterion_detection() {
    Criterion c;
    const auto start = Clock::now();

    int skew_flagged = 0, ratio_ok = 0, iid_clean = 0, corrupted_ok = 0, noisy_ok = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
        // label skew vs IID divergence ratio
        const Dataset pool = scenario_dataset(s, 1200);
        const auto skew_parts =
            partition_label_skew(pool, {0.9, 0.7, 0.5, 0.1}, 250, derive_seed(s, "part"));
        const LabelSkewResult skew = detect_label_skew(skew_parts);
        const auto iid_parts = scenario_partitions(Scenario::iid, s);
        const LabelSkewResult iid_skew = detect_label_skew(iid_parts);
        if (skew.flag) ++skew_flagged;
        if (skew.max_jsd >= 10.0 * iid_skew.max_jsd) ++ratio_ok;

        // IID: all three flags must stay down
        const HeterogeneityReport iid_report =
            build_report(iid_parts, kArch, derive_seed(s, "detect"), {}, kJobs);
        if (!iid_report.label_skew && !iid_report.feature_skew && !iid_report.outlier_risk) {
            ++iid_clean;
        }

        OutlierSettings probe;
        probe.seed = derive_seed(s, "detect");
        probe.jobs = kJobs;
        const OutlierResult corrupted =
            detect_outliers(scenario_partitions(Scenario::corrupted_client, s), kArch, probe);
        if (corrupted.flag_counts[kClients - 1] >= 4) ++corrupted_ok;

        const OutlierResult noisy =
            detect_outliers(scenario_partitions(Scenario::noisy_label, s), kArch, probe);
        if (noisy.flag_counts[kClients - 1] <= 3) ++noisy_ok;
    }

    c.require(skew_flagged == 10, "label skew flagged " + std::to_string(skew_flagged) + "/10");
    c.require(ratio_ok == 10, "jsd ratio >= 10x held " + std::to_string(ratio_ok) + "/10");
    c.require(iid_clean >= 9, "IID clean in " + std::to_string(iid_clean) + "/10");
    c.require(corrupted_ok >= 9,
              "corrupted flagged >=4/5 in " + std::to_string(corrupted_ok) + "/10");
    c.require(noisy_ok >= 9, "noisy stayed <=3/5 in " + std::to_string(noisy_ok) + "/10");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 600.0, "runtime " + fmt(elapsed) + "s exceeds 10min");
    c.note("skew " + std::to_string(skew_flagged) + "/10, ratio " + std::to_string(ratio_ok) +
           "/10, iid " + std::to_string(iid_clean) + "/10, corrupted " +
           std::to_string(corrupted_ok) + "/10, noisy " + std::to_string(noisy_ok) + "/10, " +
           fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 3

Criterion criterion_pca() {
    Criterion c;
    const auto start = Clock::now();

    Rng rng(30003);
    int cov_fail = 0, eig_fail = 0;
    int accepted = 0;
    while (accepted < 50) {
        const int d = static_cast<int>(rng.uniform_int(2, 20));
        const int n_clients = static_cast<int>(rng.uniform_int(2, 5));
        const int n = static_cast<int>(rng.uniform_int(60, 400));

        // correlated features: random linear mix of a latent vector plus noise
        Dataset ds;
        ds.n_features = static_cast<std::size_t>(d);
        std::vector<double> mix(static_cast<std::size_t>(d * d));
        for (double& v : mix) v = rng.normal();
        std::vector<double> shift(static_cast<std::size_t>(d));
        for (double& v : shift) v = rng.uniform(-5.0, 5.0);
        std::vector<double> latent(static_cast<std::size_t>(d));
        for (int i = 0; i < n; ++i) {
            for (double& z : latent) z = rng.normal();
            for (int j = 0; j < d; ++j) {
                double x = shift[static_cast<std::size_t>(j)] + 0.3 * rng.normal();
                for (int k = 0; k < d; ++k) {
                    x += mix[static_cast<std::size_t>(j * d + k)] *
                         latent[static_cast<std::size_t>(k)] / std::sqrt(d);
                }
                ds.features.push_back(x);
            }
            ds.labels.push_back(i % 2);
        }
        const auto parts = partition_iid(ds, n_clients, rng.next_u64());

        MomentStats merged = compute_moments(parts[0].data);
        for (std::size_t i = 1; i < parts.size(); ++i) {
            merged = merge_moments(std::move(merged), compute_moments(parts[i].data));
        }
        const std::vector<double> assembled = standardized_covariance(merged);
        const auto oracle = ref::jacobi_eigen(assembled, static_cast<std::size_t>(d));
        // Eigenvectors are only identifiable up to the spectral gap: at a
        // near-tie even two exact solvers return different bases, so the
        // componentwise comparison needs separated top eigenvalues.
        const double scale = std::max(oracle.values[0], 1e-12);
        if ((oracle.values[0] - oracle.values[1]) / scale < 1e-3) continue;
        if (d > 2 && (oracle.values[1] - oracle.values[2]) / scale < 1e-3) continue;
        ++accepted;

        const std::vector<double> central = ref::pooled_standardized_covariance(parts);
        for (std::size_t i = 0; i < assembled.size(); ++i) {
            if (std::abs(assembled[i] - central[i]) >= 1e-9) {
                ++cov_fail;
                break;
            }
        }

        const Top2 top = top2_eigenvectors(assembled, static_cast<std::size_t>(d));
        for (int comp = 0; comp < 2; ++comp) {
            // compare after sign alignment: the convention itself can flip at
            // exact magnitude ties between entries
            double diff_plus = 0.0, diff_minus = 0.0;
            for (int j = 0; j < d; ++j) {
                const double a = top.components[comp][static_cast<std::size_t>(j)];
                const double b = oracle.vectors[static_cast<std::size_t>(comp)]
                                               [static_cast<std::size_t>(j)];
                diff_plus = std::max(diff_plus, std::abs(a - b));
                diff_minus = std::max(diff_minus, std::abs(a + b));
            }
            if (std::min(diff_plus, diff_minus) >= 1e-6) {
                ++eig_fail;
                break;
            }
        }
    }
    c.require(cov_fail == 0, std::to_string(cov_fail) + "/50 covariance mismatches > 1e-9");
    c.require(eig_fail == 0, std::to_string(eig_fail) + "/50 component mismatches > 1e-6");

    // monotone centroid separation across injected shift magnitudes
    int monotone_ok = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
        const Dataset ds = scenario_dataset(s);
        std::vector<double> distances;
        for (const double mag : {0.0, 0.5, 1.0, 2.0}) {
            auto parts = partition_iid(ds, kClients, derive_seed(s, "part"));
            const std::vector<NoiseSpec> noise{{0.0 * mag, 0.1},
                                               {0.0 * mag, 0.5},
                                               {1.0 * mag, 0.1},
                                               {-0.1 * mag, 0.1}};
            parts = apply_feature_noise(std::move(parts), noise, derive_seed(s, "shift"));
            distances.push_back(detect_feature_skew(parts).max_distance);
        }
        bool increasing = true;
        for (std::size_t i = 1; i < distances.size(); ++i) {
            if (!(distances[i] > distances[i - 1])) increasing = false;
        }
        if (increasing) ++monotone_ok;
    }
    c.require(monotone_ok >= 9,
              "centroid distance monotone in " + std::to_string(monotone_ok) + "/10 seeds");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 120.0, "runtime " + fmt(elapsed) + "s exceeds 2min");
    c.note("50 covariance/eigen checks, monotone " + std::to_string(monotone_ok) + "/10, " +
           fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 4

Criterion criterion_aggregators() {
    Criterion c;
    const auto start = Clock::now();

    Rng rng(40004);
    auto random_updates = [&rng](int n) {
        std::vector<ClientUpdate> updates;
        for (int i = 0; i < n; ++i) {
            ClientUpdate u;
            u.client_id = i;
            u.num_examples = rng.uniform_int(1, 500);
            u.params.layers = {std::vector<double>(5), std::vector<double>(3)};
            for (auto& layer : u.params.layers) {
                for (double& v : layer) v = rng.uniform(-10.0, 10.0);
            }
            updates.push_back(std::move(u));
        }
        return updates;
    };

    int oracle_fail = 0;
    for (int n = 3; n <= 5; ++n) {
        for (int t = 0; t < 200; ++t) {
            const auto updates = random_updates(n);
            const ModelParams& global = updates[0].params;

            const StrategyConfig median{StrategyName::fed_median, {}};
            if (aggregate(median, updates, global).layers !=
                ref::coordinate_median(updates).layers) {
                ++oracle_fail;
            }
            StrategyConfig trimmed{StrategyName::fed_trimmed_avg, {}};
            const double beta = round4(rng.uniform(0.0, 0.49));
            trimmed.params["beta"] = ParamValue::real(beta);
            if (aggregate(trimmed, updates, global).layers !=
                ref::trimmed_mean(updates, beta).layers) {
                ++oracle_fail;
            }
            StrategyConfig krum{StrategyName::krum, {}};
            const std::int64_t f = rng.uniform_int(0, n - 3);
            const std::int64_t m = rng.uniform_int(1, n);
            krum.params["num_malicious_clients"] = ParamValue::integer(f);
            krum.params["num_clients_to_keep"] = ParamValue::integer(m);
            if (aggregate(krum, updates, global).layers != ref::krum(updates, f, m).layers) {
                ++oracle_fail;
            }
        }
    }
    c.require(oracle_fail == 0, std::to_string(oracle_fail) + " oracle mismatches");

    int robustness_fail = 0;
    for (int t = 0; t < 100; ++t) {
        const int n = static_cast<int>(rng.uniform_int(4, 6));
        std::vector<std::vector<double>> honest = {std::vector<double>(4),
                                                   std::vector<double>(4)};
        for (auto& layer : honest) {
            for (double& v : layer) v = static_cast<double>(rng.uniform_int(-4096, 4096)) / 256.0;
        }
        std::vector<ClientUpdate> updates;
        for (int i = 0; i < n - 1; ++i) {
            ClientUpdate u;
            u.client_id = i;
            u.num_examples = rng.uniform_int(1, 100);
            u.params.layers = honest;
            updates.push_back(std::move(u));
        }
        ClientUpdate outlier;
        outlier.client_id = n - 1;
        outlier.num_examples = rng.uniform_int(1, 100);
        outlier.params.layers = honest;
        for (auto& layer : outlier.params.layers) {
            for (double& v : layer) v += rng.uniform(1.0, 40.0) * (rng.uniform() < 0.5 ? -1 : 1);
        }
        updates.push_back(std::move(outlier));
        const ModelParams honest_params{honest};

        const StrategyConfig median{StrategyName::fed_median, {}};
        StrategyConfig krum{StrategyName::krum, {}};
        krum.params["num_malicious_clients"] = ParamValue::integer(rng.uniform_int(1, n - 3));
        krum.params["num_clients_to_keep"] = ParamValue::integer(rng.uniform_int(1, n - 1));
        const StrategyConfig fedavg{StrategyName::fed_avg, {}};

        if (aggregate(median, updates, honest_params).layers != honest_params.layers ||
            aggregate(krum, updates, honest_params).layers != honest_params.layers ||
            aggregate(fedavg, updates, honest_params).layers == honest_params.layers) {
            ++robustness_fail;
        }
    }
    c.require(robustness_fail == 0,
              std::to_string(robustness_fail) + "/100 robustness instances failed");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 30.0, "runtime " + fmt(elapsed) + "s exceeds 30s");
    c.note("600 oracle draws, 100 robustness instances, " + fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 5

Criterion criterion_genetic_contract() {
    Criterion c;
    const auto start = Clock::now();
    const StrategySchema schema = default_schema();

    const auto landscape = [](const StrategyConfig& cfg) {
        if (cfg.name != StrategyName::fed_prox) return 0.0;
        return 1.0 - std::abs(cfg.params.at("proximal_mu").real_value - 0.5);
    };

    // contract checks on one run
    {
        int evals = 0;
        const SearchResult run = genetic_search(
            schema, kClients,
            [&](const StrategyConfig& cfg, int) -> EvalOutcome {
                ++evals;
                return landscape(cfg);
            },
            7);
        c.require(evals == 8, "expected 8 evaluations, saw " + std::to_string(evals));
        c.require(run.archive.hashes.size() == 8, "archive hashes not unique");

        const SearchResult replay = genetic_search(
            schema, kClients,
            [&](const StrategyConfig& cfg, int) -> EvalOutcome { return landscape(cfg); }, 7);
        bool identical = replay.archive.records.size() == run.archive.records.size();
        for (std::size_t i = 0; identical && i < run.archive.records.size(); ++i) {
            identical = run.archive.records[i].config == replay.archive.records[i].config &&
                        run.archive.records[i].fitness == replay.archive.records[i].fitness;
        }
        c.require(identical, "replay with the same seed diverged");
    }

    // landscape success rate over the first 20 qualifying seeds
    int qualifying = 0, successes = 0, preserve_fail = 0, oracle_fail = 0;
    for (std::uint64_t seed = 1; qualifying < 20 && seed < 400; ++seed) {
        const SearchResult run = genetic_search(
            schema, kClients,
            [&](const StrategyConfig& cfg, int) -> EvalOutcome { return landscape(cfg); }, seed);

        bool qualifies = false;
        for (int i = 0; i < 4; ++i) {
            const FitnessRecord& r = run.archive.records[static_cast<std::size_t>(i)];
            if (r.config.name == StrategyName::fed_prox) {
                const double mu = r.config.params.at("proximal_mu").real_value;
                if (mu >= 0.35 && mu <= 0.65) qualifies = true;
            }
        }
        if (!qualifies) continue;
        ++qualifying;

        // strategy preservation of generation 2 (fallback-free runs)
        std::vector<std::size_t> order{0, 1, 2, 3};
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return run.archive.records[a].fitness > run.archive.records[b].fitness;
        });
        const std::set<StrategyName> elites{run.archive.records[order[0]].config.name,
                                            run.archive.records[order[1]].config.name};
        for (std::size_t i = 4; i < 8; ++i) {
            const FitnessRecord& r = run.archive.records[i];
            if (!r.via_fallback && elites.count(r.config.name) == 0) ++preserve_fail;
        }

        // oracle: the mutation neighborhood of the elites reaches >= 0.9
        double reachable = 0.0;
        for (int i = 0; i < 4; ++i) {
            reachable = std::max(reachable, run.archive.records[static_cast<std::size_t>(i)].fitness);
        }
        for (std::size_t e : {order[0], order[1]}) {
            const FitnessRecord& r = run.archive.records[e];
            if (r.config.name == StrategyName::fed_prox) {
                const double mu = r.config.params.at("proximal_mu").real_value;
                reachable = std::max(reachable, 1.0 - std::max(0.0, std::abs(mu - 0.5) - 0.1));
            }
        }
        if (reachable < 0.9) ++oracle_fail;
        if (run.best.fitness >= 0.9) ++successes;
    }
    c.require(qualifying == 20, "only " + std::to_string(qualifying) + " qualifying seeds found");
    c.require(oracle_fail == 0, "oracle says 0.9 unreachable for " +
                                    std::to_string(oracle_fail) + " qualifying seeds");
    c.require(preserve_fail == 0,
              std::to_string(preserve_fail) + " generation-2 strategy preservation violations");
    c.require(successes >= 18,
              "best >= 0.9 in only " + std::to_string(successes) + "/20 qualifying seeds");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 10.0, "runtime " + fmt(elapsed) + "s exceeds 10s");
    c.note("best >= 0.9 in " + std::to_string(successes) + "/20, " + fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 6

double paired_fitness(const StrategyConfig& config, const std::vector<ClientPartition>& parts,
                      std::uint64_t seed) {
    RunConfig rc;
    rc.strategy = config;
    rc.rounds = 30;
    rc.architecture = kArch;
    rc.seed = derive_seed(seed, "trial_run", hash_config(config));
    rc.jobs = kJobs;
    return fitness(run_federation(rc, parts));
}

Criterion criterion_end_to_end() {
    Criterion c;
    const auto start = Clock::now();
    const StrategySchema schema = default_schema();

    for (const Scenario scenario : {Scenario::corrupted_client, Scenario::label_poisoning}) {
        double genetic_mean = 0.0, advisor_mean = 0.0, fedavg_mean = 0.0;
        for (std::uint64_t s = 1; s <= 10; ++s) {
            const auto parts = scenario_partitions(scenario, s);
            const EvaluateFn evaluate = [&](const StrategyConfig& cfg, int) -> EvalOutcome {
                return paired_fitness(cfg, parts, s);
            };
            const SearchResult genetic =
                genetic_search(schema, kClients, evaluate, derive_seed(s, "genetic"));
            genetic_mean += genetic.best.fitness;

            fedavg_mean += paired_fitness({StrategyName::fed_avg, {}}, parts, s);

            const HeterogeneityReport report =
                build_report(parts, kArch, derive_seed(s, "detect"), {}, kJobs);
            const StrategyConfig advisor_cfg = rule_mock_config(
                report.label_skew, report.feature_skew, report.outlier_risk, kClients);
            advisor_mean += paired_fitness(advisor_cfg, parts, s);
        }
        genetic_mean /= 10.0;
        advisor_mean /= 10.0;
        fedavg_mean /= 10.0;
        const std::string name = to_string(scenario);
        c.require(genetic_mean >= fedavg_mean + 0.01,
                  name + ": genetic " + fmt(genetic_mean) + " < fedavg " + fmt(fedavg_mean) +
                      " + 0.01");
        c.require(advisor_mean >= fedavg_mean, name + ": advisor " + fmt(advisor_mean) +
                                                   " < fedavg " + fmt(fedavg_mean));
        c.note(name + " genetic " + fmt(genetic_mean) + " advisor " + fmt(advisor_mean) +
               " fedavg " + fmt(fedavg_mean));
    }

    // IID: recommendation must stay comparable to FedAvg
    {
        double advisor_mean = 0.0, fedavg_mean = 0.0;
        for (std::uint64_t s = 1; s <= 10; ++s) {
            const auto parts = scenario_partitions(Scenario::iid, s);
            fedavg_mean += paired_fitness({StrategyName::fed_avg, {}}, parts, s);
            const HeterogeneityReport report =
                build_report(parts, kArch, derive_seed(s, "detect"), {}, kJobs);
            const StrategyConfig advisor_cfg = rule_mock_config(
                report.label_skew, report.feature_skew, report.outlier_risk, kClients);
            advisor_mean += paired_fitness(advisor_cfg, parts, s);
        }
        advisor_mean /= 10.0;
        fedavg_mean /= 10.0;
        c.require(std::abs(advisor_mean - fedavg_mean) <= 0.02,
                  "iid |advisor - fedavg| = " + fmt(std::abs(advisor_mean - fedavg_mean)) +
                      " > 0.02");
        c.note("iid advisor " + fmt(advisor_mean) + " fedavg " + fmt(fedavg_mean));
    }

    const double elapsed = seconds_since(start);
    c.require(elapsed < 2700.0, "runtime " + fmt(elapsed) + "s exceeds 45min");
    c.note(fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 7

Criterion criterion_advisor_robustness() {
    Criterion c;
    const auto start = Clock::now();
    const StrategySchema schema = default_schema();
    AdvisorOptions options;
    options.backoff_ms = 1;
    HeterogeneityReport report;
    report.label_skew = true;

    {
        ScriptedBackend backend(
            {"malformed one", "malformed two", "{'strategy_name': 'fed_prox', 'proximal_mu': 0.7}"});
        const AdvisorOutcome outcome = recommend(report, schema, 4, backend, options);
        c.require(outcome.attempts == 3,
                  "expected success at attempt 3, got " + std::to_string(outcome.attempts));
        c.require(outcome.raw_responses.size() == 3, "raw responses not recorded");
    }
    {
        ScriptedBackend backend({"malformed", "malformed", "malformed"});
        bool threw = false;
        try {
            recommend(report, schema, 4, backend, options);
        } catch (const ExhaustedRetriesError& e) {
            threw = true;
            c.require(e.raw_responses.size() == 3,
                      "exhausted error carries " + std::to_string(e.raw_responses.size()) +
                          " responses");
        }
        c.require(threw, "exhausted retries did not raise");
    }

    int fuzz_fail = 0;
    Rng rng(70007);
    for (const int n : {3, 4, 10, 50}) {
        for (int i = 0; i < 125; ++i) {
            const StrategyConfig cfg = sample_uniform(schema, n, rng);
            ScriptedBackend backend({cfg.to_text()});
            try {
                const AdvisorOutcome outcome = recommend(report, schema, n, backend, options);
                validate_config(outcome.config, schema, n);
                if (!(outcome.config == cfg)) ++fuzz_fail;
            } catch (const std::exception&) {
                ++fuzz_fail;
            }
        }
    }
    c.require(fuzz_fail == 0, std::to_string(fuzz_fail) + "/500 fuzzed responses failed");

    const double elapsed = seconds_since(start);
    c.require(elapsed < 10.0, "runtime " + fmt(elapsed) + "s exceeds 10s");
    c.note("500 fuzzed responses, " + fmt(elapsed) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 8

Criterion criterion_runtime_ordering() {
    Criterion c;
    const StrategySchema schema = default_schema();

    // the default synthetic scenario: generator defaults, IID partitions
    const Dataset ds = generate_synthetic(1000, 10, 2, derive_seed(1, "data"));
    const auto parts = partition_iid(ds, kClients, derive_seed(1, "part"));
    const std::vector<int> arch{10, 32, 2};

    const auto run_once = [&](const StrategyConfig& cfg, std::uint64_t seed) {
        RunConfig rc;
        rc.strategy = cfg;
        rc.rounds = 30;
        rc.architecture = arch;
        rc.seed = seed;
        rc.jobs = kJobs;
        return fitness(run_federation(rc, parts));
    };

    auto t0 = Clock::now();
    run_once({StrategyName::fed_avg, {}}, derive_seed(1, "run"));
    const double t_run = seconds_since(t0);

    t0 = Clock::now();
    build_report(parts, arch, derive_seed(1, "detect"), {}, kJobs);
    const double t_detect = seconds_since(t0);

    const EvaluateFn evaluate = [&](const StrategyConfig& cfg, int trial) -> EvalOutcome {
        return run_once(cfg, derive_seed(1, "trial", static_cast<std::uint64_t>(trial)));
    };
    t0 = Clock::now();
    genetic_search(schema, kClients, evaluate, derive_seed(1, "genetic"));
    const double t_genetic = seconds_since(t0);

    t0 = Clock::now();
    reference_search(schema, kClients, evaluate, 50, derive_seed(1, "hporef"));
    const double t_reference = seconds_since(t0);

    c.require(t_run < t_detect, "one run " + fmt(t_run) + "s !< detect " + fmt(t_detect) + "s");
    c.require(t_detect < t_genetic,
              "detect " + fmt(t_detect) + "s !< genetic " + fmt(t_genetic) + "s");
    c.require(t_genetic < t_reference,
              "genetic " + fmt(t_genetic) + "s !< reference " + fmt(t_reference) + "s");
    c.require(t_detect <= 3.0 * t_run,
              "detect " + fmt(t_detect) + "s > 3x run " + fmt(t_run) + "s");
    c.note("run " + fmt(t_run) + "s, detect " + fmt(t_detect) + "s, genetic " + fmt(t_genetic) +
           "s, reference " + fmt(t_reference) + "s");
    return c;
}

// ---------------------------------------------------------------- criterion 9

Criterion criterion_budget_exactness() {
    Criterion c;
    const StrategySchema schema = default_schema();
    int genetic_evals = 0, reference_evals = 0;
    genetic_search(schema, kClients,
                   [&](const StrategyConfig&, int) -> EvalOutcome {
                       ++genetic_evals;
                       return 0.5;
                   },
                   3);
    reference_search(schema, kClients,
                     [&](const StrategyConfig&, int) -> EvalOutcome {
                         ++reference_evals;
                         return 0.5;
                     },
                     50, 3);
    c.require(genetic_evals == 8, "genetic ran " + std::to_string(genetic_evals) + " evals");
    c.require(reference_evals == 50,
              "reference ran " + std::to_string(reference_evals) + " evals");
    c.note("genetic 8/8, reference 50/50");
    return c;
}

struct Entry {
    int number;
    const char* name;
    std::function<Criterion()> fn;
};

const std::vector<Entry>& entries() {
    static const std::vector<Entry> list = {
        {1, "divergence math", criterion_divergence_math},
        {2, "detection correctness", criterion_detection},
        {3, "federated PCA fidelity", criterion_pca},
        {4, "aggregator oracles", criterion_aggregators},
        {5, "genetic search contract", criterion_genetic_contract},
        {6, "end-to-end ordering", criterion_end_to_end},
        {7, "advisor robustness", criterion_advisor_robustness},
        {8, "relative runtime ordering", criterion_runtime_ordering},
        {9, "budget exactness", criterion_budget_exactness},
    };
    return list;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    if (argc > 1 && std::strcmp(argv[1], "all") != 0) only = std::atoi(argv[1]);

    bool all_pass = true;
    for (const Entry& entry : entries()) {
        if (only != 0 && entry.number != only) continue;
        const Criterion result = entry.fn();
        std::printf("[%s] criterion %d: %s (%s)\n", result.pass ? "PASS" : "FAIL", entry.number,
                    entry.name, result.details.str().c_str());
        std::fflush(stdout);
        all_pass = all_pass && result.pass;
    }
    return all_pass ? 0 : 1;
}
