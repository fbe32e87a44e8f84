#include "fedsel/search.hpp"

#include <algorithm>
#include <cmath>

namespace fedsel {

void Archive::append(FitnessRecord record, std::uint64_t hash) {
    if (!hashes.insert(hash).second) {
        throw std::logic_error("archive: duplicate config hash");
    }
    records.push_back(std::move(record));
}

std::size_t Archive::best_index() const {
    if (records.empty()) throw std::logic_error("archive: empty");
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].fitness > records[best].fitness) best = i;
    }
    return best;
}

std::uint64_t hash_config(const StrategyConfig& config) {
    return fnv1a64(config.to_json());
}

namespace {

std::vector<StrategyName> schema_strategies(const StrategySchema& schema) {
    std::vector<StrategyName> names;
    names.reserve(schema.entries.size());
    for (const auto& [name, specs] : schema.entries) {
        (void)specs;
        names.push_back(name);
    }
    if (names.empty()) throw std::invalid_argument("schema has no strategies");
    return names;
}

void check_feasible(const StrategySchema& schema, int n_clients) {
    for (const auto& [name, specs] : schema.entries) {
        for (const ParamSpec& spec : specs) {
            if (spec.resolved_lo(n_clients) > spec.resolved_hi(n_clients)) {
                throw std::invalid_argument(
                    std::string("schema infeasible for ") + std::to_string(n_clients) +
                    " clients: empty domain for '" + spec.name + "' of '" + to_string(name) + "'");
            }
        }
    }
}

// Top-k record indices by fitness, ties broken by earliest evaluation.
std::vector<std::size_t> top_k_indices(const Archive& archive, int k) {
    std::vector<std::size_t> idx(archive.records.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return archive.records[a].fitness > archive.records[b].fitness;
    });
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k)));
    return idx;
}

struct Candidate {
    StrategyConfig config;
    std::uint64_t hash = 0;
    bool via_fallback = false;
};

}  // namespace

StrategyConfig sample_uniform(const StrategySchema& schema, int n_clients, Rng& rng) {
    check_feasible(schema, n_clients);
    const std::vector<StrategyName> names = schema_strategies(schema);
    StrategyConfig cfg;
    cfg.name = names[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(names.size()) - 1))];
    for (const ParamSpec& spec : schema.specs_for(cfg.name)) {
        const double lo = spec.resolved_lo(n_clients);
        const double hi = spec.resolved_hi(n_clients);
        if (spec.kind == ParamKind::integer) {
            cfg.params[spec.name] = ParamValue::integer(
                rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
        } else {
            cfg.params[spec.name] = ParamValue::real(round4(rng.uniform(lo, hi)));
        }
    }
    return cfg;
}

StrategyConfig mutate(const StrategyConfig& parent, const StrategySchema& schema, int n_clients,
                      Rng& rng) {
    StrategyConfig child = parent;
    for (const ParamSpec& spec : schema.specs_for(parent.name)) {
        const double lo = spec.resolved_lo(n_clients);
        const double hi = spec.resolved_hi(n_clients);
        ParamValue& v = child.params.at(spec.name);
        if (spec.kind == ParamKind::integer) {
            const std::int64_t step = rng.uniform_int(-1, 1);
            v.int_value = std::clamp(v.int_value + step, static_cast<std::int64_t>(lo),
                                     static_cast<std::int64_t>(hi));
        } else {
            const double eps = rng.uniform(-0.1, 0.1);
            v.real_value = round4(std::clamp(v.real_value + eps, lo, hi));
        }
    }
    return child;
}

SearchResult genetic_search(const StrategySchema& schema, int n_clients,
                            const EvaluateFn& evaluate, std::uint64_t seed,
                            const SearchParams& params) {
    if (params.generations < 1 || params.population < 1 || params.top_k < 1) {
        throw std::invalid_argument("genetic_search: generations, population, top_k must be >= 1");
    }
    check_feasible(schema, n_clients);

    Rng rng(derive_seed(seed, "genetic_search"));
    Archive archive;
    int trial_index = 0;

    for (int gen = 1; gen <= params.generations; ++gen) {
        std::vector<Candidate> batch;
        std::unordered_set<std::uint64_t> pending;
        int stall = 0;
        long attempts = 0;

        const std::vector<std::size_t> elites = top_k_indices(archive, params.top_k);
        while (static_cast<int>(batch.size()) < params.population) {
            if (++attempts > params.max_draw_attempts) {
                throw SearchSpaceExhausted(
                    "genetic_search: could not find enough unique configurations (schema too "
                    "small for the trial budget)");
            }
            Candidate cand;
            if (gen == 1 || elites.empty()) {
                cand.config = sample_uniform(schema, n_clients, rng);
            } else if (stall >= params.stall_limit) {
                // The mutation neighborhood around the elites is exhausted
                // (e.g. parameterless parents); fill the slot uniformly so the
                // budget of unique evaluations is preserved.
                cand.config = sample_uniform(schema, n_clients, rng);
                cand.via_fallback = true;
            } else if (rng.uniform() < params.mutation_rate) {
                const std::size_t pick = static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(elites.size()) - 1));
                cand.config = mutate(archive.records[elites[pick]].config, schema, n_clients, rng);
            } else {
                cand.config = sample_uniform(schema, n_clients, rng);
            }
            cand.hash = hash_config(cand.config);
            if (archive.contains(cand.hash) || pending.count(cand.hash) != 0) {
                ++stall;
                continue;
            }
            stall = 0;
            pending.insert(cand.hash);
            batch.push_back(std::move(cand));
        }

        std::vector<EvalOutcome> outcomes(batch.size());
        const int batch_size = static_cast<int>(batch.size());
#pragma omp parallel for schedule(dynamic) num_threads(params.jobs) if (params.jobs > 1)
        for (int i = 0; i < batch_size; ++i) {
            outcomes[static_cast<std::size_t>(i)] =
                evaluate(batch[static_cast<std::size_t>(i)].config, trial_index + i);
        }
        // Commit in candidate order so parallel and sequential runs agree.
        for (std::size_t i = 0; i < batch.size(); ++i) {
            FitnessRecord record;
            record.config = batch[i].config;
            record.fitness = outcomes[i].fitness;
            record.run_ref = outcomes[i].run_ref;
            record.generation = gen;
            record.via_fallback = batch[i].via_fallback;
            archive.append(std::move(record), batch[i].hash);
        }
        trial_index += batch_size;
    }

    SearchResult result;
    result.best = archive.records[archive.best_index()];
    result.archive = std::move(archive);
    return result;
}

ReferenceResult reference_search(const StrategySchema& schema, int n_clients,
                                 const EvaluateFn& evaluate, int trials, std::uint64_t seed,
                                 int jobs) {
    if (trials < 1) throw std::invalid_argument("reference_search: trials must be >= 1");
    check_feasible(schema, n_clients);

    Rng rng(derive_seed(seed, "reference_search"));
    std::vector<Candidate> batch;
    std::unordered_set<std::uint64_t> pending;
    long attempts = 0;
    while (static_cast<int>(batch.size()) < trials) {
        if (++attempts > 100000) {
            throw SearchSpaceExhausted("reference_search: could not find enough unique configs");
        }
        Candidate cand;
        cand.config = sample_uniform(schema, n_clients, rng);
        cand.hash = hash_config(cand.config);
        if (pending.count(cand.hash) != 0) continue;
        pending.insert(cand.hash);
        batch.push_back(std::move(cand));
    }

    std::vector<EvalOutcome> outcomes(batch.size());
#pragma omp parallel for schedule(dynamic) num_threads(jobs) if (jobs > 1)
    for (int i = 0; i < trials; ++i) {
        outcomes[static_cast<std::size_t>(i)] = evaluate(batch[static_cast<std::size_t>(i)].config, i);
    }

    Archive archive;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        FitnessRecord record;
        record.config = batch[i].config;
        record.fitness = outcomes[i].fitness;
        record.run_ref = outcomes[i].run_ref;
        record.generation = 1;
        archive.append(std::move(record), batch[i].hash);
    }

    ReferenceResult result;
    std::size_t best = 0, worst = 0;
    for (std::size_t i = 1; i < archive.records.size(); ++i) {
        if (archive.records[i].fitness > archive.records[best].fitness) best = i;
        if (archive.records[i].fitness < archive.records[worst].fitness) worst = i;
    }
    result.best = archive.records[best];
    result.worst = archive.records[worst];
    result.archive = std::move(archive);
    return result;
}

}  // namespace fedsel
