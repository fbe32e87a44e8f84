#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "fedsel/dataset.hpp"
#include "fedsel/model.hpp"
#include "fedsel/strategies.hpp"

namespace fedsel {

struct RunConfig {
    StrategyConfig strategy;
    int rounds = 30;
    TrainSettings train;
    std::vector<int> architecture;  // full layer sizes, input first
    std::uint64_t seed = 0;
    int jobs = 1;  // client-level parallelism; results are identical for any value
};

enum class RunStatus { ok, failed };

struct RunResult {
    RunStatus status = RunStatus::ok;
    std::string failure_reason;
    std::vector<double> weighted_accuracy;           // one entry per completed round
    std::vector<std::vector<double>> client_accuracy;  // [round][client]
    std::vector<long> client_sizes;
    ModelParams final_params;  // empty when the run failed
};

/// Every fifth sample of a client partition is held out for evaluation; the
/// rest is the local training set. The split is positional, so identical
/// partitions always produce identical splits.
inline constexpr int kEvalHoldoutStride = 5;

struct ClientSplit {
    Dataset train;
    Dataset eval;
};
ClientSplit split_client_data(const Dataset& data);

/// Synchronous FL rounds with full participation: broadcast, local training
/// on each client's training split (the strategy's proximal_mu is injected
/// for fed_prox), aggregation in client_id order, then per-client evaluation
/// of the new global model on the held-out split. Training divergence or a
/// non-finite aggregate marks the run failed.
RunResult run_federation(const RunConfig& config, const std::vector<ClientPartition>& partitions);

/// Mean of the final five weighted accuracies; exactly 0 for failed runs.
double fitness(const RunResult& result);

/// round,weighted_accuracy,client_0_acc,...
void write_metrics_csv(const RunResult& result, std::ostream& out);

}  // namespace fedsel
