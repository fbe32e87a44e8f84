#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "fedsel/rng.hpp"
#include "fedsel/strategies.hpp"

namespace fedsel {

class SearchSpaceExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FitnessRecord {
    StrategyConfig config;
    double fitness = 0.0;
    std::string run_ref;  // persisted run directory, when the evaluator made one
    int generation = 0;
    bool via_fallback = false;  // drawn uniformly after a mutation dedup stall
};

/// Append-only record of every evaluated (config, fitness) pair; hashes stay
/// strictly unique.
struct Archive {
    std::vector<FitnessRecord> records;
    std::unordered_set<std::uint64_t> hashes;

    bool contains(std::uint64_t hash) const { return hashes.count(hash) != 0; }
    void append(FitnessRecord record, std::uint64_t hash);
    /// Index of the best record; ties break on earliest evaluation.
    std::size_t best_index() const;
};

/// Digest of the canonical JSON serialization; stable across runs and platforms.
std::uint64_t hash_config(const StrategyConfig& config);

/// Uniform strategy name, each parameter uniform over its n-resolved domain,
/// reals rounded to 4 decimals. Always valid by construction.
StrategyConfig sample_uniform(const StrategySchema& schema, int n_clients, Rng& rng);

/// Strategy-preserving mutation: integers get a uniform {-1, 0, +1} step with
/// clamping, reals get Unif[-0.1, 0.1] with clipping and 4-decimal rounding.
/// Parameterless strategies return the parent unchanged.
StrategyConfig mutate(const StrategyConfig& parent, const StrategySchema& schema, int n_clients,
                      Rng& rng);

struct EvalOutcome {
    double fitness = 0.0;
    std::string run_ref;
    EvalOutcome() = default;
    EvalOutcome(double f) : fitness(f) {}  // NOLINT: implicit by design for tests
    EvalOutcome(double f, std::string ref) : fitness(f), run_ref(std::move(ref)) {}
};

/// Called once per accepted candidate; trial_index counts evaluations from 0.
using EvaluateFn = std::function<EvalOutcome(const StrategyConfig&, int trial_index)>;

struct SearchParams {
    int generations = 2;
    int population = 4;
    int top_k = 2;
    double mutation_rate = 1.0;
    int stall_limit = 20;          // consecutive dedup failures before a uniform fallback
    long max_draw_attempts = 100000;  // hard stop for degenerate schemas
    int jobs = 1;                  // candidate evaluations in parallel, ordered commit
};

struct SearchResult {
    FitnessRecord best;
    Archive archive;
};

/// Budgeted genetic search: generation 1 samples uniformly, later generations
/// mutate parents drawn from the global top-k; duplicates (by hash) are never
/// evaluated. Calls evaluate exactly generations * population times.
SearchResult genetic_search(const StrategySchema& schema, int n_clients,
                            const EvaluateFn& evaluate, std::uint64_t seed,
                            const SearchParams& params = {});

struct ReferenceResult {
    FitnessRecord best;
    FitnessRecord worst;
    Archive archive;
};

/// Uniform random search with dedup; returns the best and worst records as
/// the empirical envelope.
ReferenceResult reference_search(const StrategySchema& schema, int n_clients,
                                 const EvaluateFn& evaluate, int trials, std::uint64_t seed,
                                 int jobs = 1);

}  // namespace fedsel
