#include "fedsel/engine.hpp"

#include <cmath>
#include <cstdio>

#include "fedsel/rng.hpp"

namespace fedsel {

ClientSplit split_client_data(const Dataset& data) {
    std::vector<std::size_t> train_idx, eval_idx;
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        if (i % kEvalHoldoutStride == kEvalHoldoutStride - 1) {
            eval_idx.push_back(i);
        } else {
            train_idx.push_back(i);
        }
    }
    if (eval_idx.empty()) {
        // Tiny partitions evaluate on everything they train on.
        return {data, data};
    }
    return {subset(data, train_idx), subset(data, eval_idx)};
}

RunResult run_federation(const RunConfig& config, const std::vector<ClientPartition>& partitions) {
    if (partitions.size() < 2) throw std::invalid_argument("run_federation: need >= 2 clients");
    if (config.rounds < 1) throw std::invalid_argument("run_federation: rounds must be >= 1");
    if (config.architecture.size() < 2) {
        throw std::invalid_argument("run_federation: architecture needs >= 2 layer sizes");
    }
    for (const ClientPartition& p : partitions) {
        if (p.data.n_samples() == 0) throw std::invalid_argument("run_federation: empty client");
        if (p.data.n_features != static_cast<std::size_t>(config.architecture.front())) {
            throw std::invalid_argument("run_federation: architecture input width mismatch");
        }
    }

    const int n = static_cast<int>(partitions.size());
    TrainSettings settings = config.train;
    if (config.strategy.name == StrategyName::fed_prox) {
        settings.proximal_mu = config.strategy.params.at("proximal_mu").as_real();
    }

    std::vector<ClientSplit> splits;
    splits.reserve(partitions.size());
    for (const ClientPartition& p : partitions) splits.push_back(split_client_data(p.data));

    RunResult result;
    result.client_sizes.reserve(partitions.size());
    double total_weight = 0.0;
    for (const ClientSplit& s : splits) {
        result.client_sizes.push_back(static_cast<long>(s.eval.n_samples()));
        total_weight += static_cast<double>(s.eval.n_samples());
    }

    ModelParams global = init_model(config.architecture, derive_seed(config.seed, "init"));

    std::vector<ClientUpdate> updates(partitions.size());
    std::vector<std::string> train_errors(partitions.size());
    std::vector<double> accs(partitions.size(), 0.0);

    for (int round = 1; round <= config.rounds; ++round) {
        for (auto& e : train_errors) e.clear();

        // Per-round, per-client seeds make the result independent of the
        // execution order; aggregation order is fixed by client_id below.
#pragma omp parallel for schedule(dynamic) num_threads(config.jobs) if (config.jobs > 1)
        for (int i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(i);
            try {
                const std::uint64_t client_seed =
                    derive_seed(config.seed, "round_train", static_cast<std::uint64_t>(round),
                                static_cast<std::uint64_t>(partitions[c].client_id));
                updates[c] = local_train(global, splits[c].train, settings, client_seed,
                                         partitions[c].client_id);
            } catch (const std::exception& e) {
                train_errors[c] = e.what();
            }
        }
        for (std::size_t c = 0; c < partitions.size(); ++c) {
            if (!train_errors[c].empty()) {
                result.status = RunStatus::failed;
                result.failure_reason = "round " + std::to_string(round) +
                                        ": training failed: " + train_errors[c];
                return result;
            }
        }

        ModelParams next = aggregate(config.strategy, updates, global);
        if (!next.all_finite()) {
            result.status = RunStatus::failed;
            result.failure_reason = "round " + std::to_string(round) + ": non-finite aggregate";
            return result;
        }
        global = std::move(next);

#pragma omp parallel for schedule(dynamic) num_threads(config.jobs) if (config.jobs > 1)
        for (int i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(i);
            accs[c] = evaluate(global, splits[c].eval).first;
        }

        double weighted = 0.0;
        std::vector<double> round_accs(partitions.size());
        for (std::size_t c = 0; c < partitions.size(); ++c) {
            round_accs[c] = accs[c];
            weighted += static_cast<double>(splits[c].eval.n_samples()) * accs[c];
        }
        result.weighted_accuracy.push_back(weighted / total_weight);
        result.client_accuracy.push_back(std::move(round_accs));
    }
    result.final_params = std::move(global);
    return result;
}

double fitness(const RunResult& result) {
    if (result.status == RunStatus::failed) return 0.0;
    if (result.weighted_accuracy.size() < 5) {
        throw std::logic_error("fitness: run recorded fewer than 5 rounds");
    }
    const std::size_t n = result.weighted_accuracy.size();
    double s = 0.0;
    for (std::size_t i = n - 5; i < n; ++i) s += result.weighted_accuracy[i];
    return s / 5.0;
}

void write_metrics_csv(const RunResult& result, std::ostream& out) {
    out << "round,weighted_accuracy";
    for (std::size_t c = 0; c < result.client_sizes.size(); ++c) out << ",client_" << c << "_acc";
    out << "\n";
    char buf[40];
    for (std::size_t r = 0; r < result.weighted_accuracy.size(); ++r) {
        std::snprintf(buf, sizeof(buf), "%.17g", result.weighted_accuracy[r]);
        out << (r + 1) << "," << buf;
        for (double a : result.client_accuracy[r]) {
            std::snprintf(buf, sizeof(buf), "%.17g", a);
            out << "," << buf;
        }
        out << "\n";
    }
}

}  // namespace fedsel
