#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "fedsel/dataset.hpp"
#include "fedsel/engine.hpp"
#include "fedsel/rng.hpp"
#include "fedsel/search.hpp"

using namespace fedsel;

namespace {

// Synthetic landscape: fed_prox scores by closeness of mu to 0.5, everything
// else scores zero.
double prox_landscape(const StrategyConfig& config) {
    if (config.name != StrategyName::fed_prox) return 0.0;
    return 1.0 - std::abs(config.params.at("proximal_mu").real_value - 0.5);
}

std::string archive_fingerprint(const Archive& archive) {
    std::string s;
    for (const FitnessRecord& r : archive.records) {
        s += r.config.to_text() + "|" + std::to_string(r.fitness) + ";";
    }
    return s;
}

}  // namespace

TEST_SUITE_BEGIN("search");

TEST_CASE("hash_config is canonical and collision-resistant in practice") {
    StrategyConfig a;
    a.name = StrategyName::krum;
    a.params["num_malicious_clients"] = ParamValue::integer(1);
    a.params["num_clients_to_keep"] = ParamValue::integer(3);
    StrategyConfig b;
    b.name = StrategyName::krum;
    b.params["num_clients_to_keep"] = ParamValue::integer(3);
    b.params["num_malicious_clients"] = ParamValue::integer(1);
    CHECK(hash_config(a) == hash_config(b));

    StrategyConfig c, d;
    c.name = StrategyName::fed_prox;
    c.params["proximal_mu"] = ParamValue::real(0.1);
    d.name = StrategyName::fed_prox;
    d.params["proximal_mu"] = ParamValue::real(0.1001);
    CHECK(hash_config(c) != hash_config(d));

    const StrategySchema schema = default_schema();
    Rng rng(1);
    std::set<std::uint64_t> hashes;
    std::set<std::string> texts;
    for (int i = 0; i < 10000; ++i) {
        const StrategyConfig cfg = sample_uniform(schema, 50, rng);
        hashes.insert(hash_config(cfg));
        texts.insert(cfg.to_text());
    }
    CHECK(hashes.size() == texts.size());  // zero collisions observed
}

TEST_CASE("sample_uniform draws each strategy near uniformly and always valid") {
    const StrategySchema schema = default_schema();
    Rng rng(17);
    std::map<StrategyName, int> counts;
    for (int i = 0; i < 10000; ++i) {
        const StrategyConfig cfg = sample_uniform(schema, 4, rng);
        counts[cfg.name]++;
        CHECK_NOTHROW(validate_config(cfg, schema, 4));
        if (cfg.name == StrategyName::krum) {
            CHECK(cfg.params.at("num_malicious_clients").int_value <= 1);  // n - 3 with n = 4
        }
    }
    for (const auto& [name, count] : counts) {
        (void)name;
        CHECK(count > 10000 * 0.18);
        CHECK(count < 10000 * 0.22);
    }
}

TEST_CASE("sample_uniform rejects infeasible schemas") {
    const StrategySchema schema = default_schema();
    Rng rng(3);
    CHECK_THROWS_AS(sample_uniform(schema, 2, rng), std::invalid_argument);  // krum needs n >= 3
}

TEST_CASE("mutate clamps, clips, rounds, and preserves the strategy") {
    const StrategySchema schema = default_schema();
    Rng rng(5);

    StrategyConfig prox;
    prox.name = StrategyName::fed_prox;
    prox.params["proximal_mu"] = ParamValue::real(0.95);
    for (int i = 0; i < 200; ++i) {
        const StrategyConfig child = mutate(prox, schema, 4, rng);
        CHECK(child.name == StrategyName::fed_prox);
        const double mu = child.params.at("proximal_mu").real_value;
        CHECK(mu >= 0.85 - 1e-12);
        CHECK(mu <= 1.0 + 1e-12);  // clipped at the domain edge
        CHECK(mu == round4(mu));
    }

    StrategyConfig krum;
    krum.name = StrategyName::krum;
    krum.params["num_malicious_clients"] = ParamValue::integer(0);
    krum.params["num_clients_to_keep"] = ParamValue::integer(1);
    for (int i = 0; i < 100; ++i) {
        const StrategyConfig child = mutate(krum, schema, 6, rng);
        CHECK(child.params.at("num_malicious_clients").int_value >= 0);  // clamped at 0
        CHECK(child.params.at("num_clients_to_keep").int_value >= 1);
    }

    const StrategyConfig avg{StrategyName::fed_avg, {}};
    CHECK(mutate(avg, schema, 4, rng) == avg);
}

TEST_CASE("genetic search budget, uniqueness, and provenance") {
    const StrategySchema schema = default_schema();
    int evaluations = 0;
    const EvaluateFn evaluate = [&](const StrategyConfig& cfg, int) -> EvalOutcome {
        ++evaluations;
        return prox_landscape(cfg);
    };
    const SearchResult result = genetic_search(schema, 4, evaluate, 11);
    CHECK(evaluations == 8);
    CHECK(result.archive.records.size() == 8);
    CHECK(result.archive.hashes.size() == 8);

    // generation bookkeeping
    int gen1 = 0, gen2 = 0;
    for (const FitnessRecord& r : result.archive.records) {
        if (r.generation == 1) ++gen1;
        if (r.generation == 2) ++gen2;
    }
    CHECK(gen1 == 4);
    CHECK(gen2 == 4);

    // best is the archive argmax and at least the best of generation 1
    double gen1_best = 0.0;
    for (int i = 0; i < 4; ++i) gen1_best = std::max(gen1_best, result.archive.records[i].fitness);
    CHECK(result.best.fitness >= gen1_best);
}

TEST_CASE("generation two preserves elite strategy names") {
    const StrategySchema schema = default_schema();
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const SearchResult result = genetic_search(
            schema, 5, [&](const StrategyConfig& cfg, int) { return prox_landscape(cfg); }, seed);
        // elites after generation 1: the top two by fitness, earliest first
        std::vector<std::size_t> order{0, 1, 2, 3};
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return result.archive.records[a].fitness > result.archive.records[b].fitness;
        });
        const std::set<StrategyName> elite_names{result.archive.records[order[0]].config.name,
                                                 result.archive.records[order[1]].config.name};
        for (std::size_t i = 4; i < 8; ++i) {
            const FitnessRecord& r = result.archive.records[i];
            if (!r.via_fallback) {
                CHECK(elite_names.count(r.config.name) == 1);
            }
        }
    }
}

TEST_CASE("deterministic replay") {
    const StrategySchema schema = default_schema();
    const EvaluateFn evaluate = [](const StrategyConfig& cfg, int) -> EvalOutcome {
        return prox_landscape(cfg);
    };
    const SearchResult a = genetic_search(schema, 4, evaluate, 99);
    const SearchResult b = genetic_search(schema, 4, evaluate, 99);
    CHECK(archive_fingerprint(a.archive) == archive_fingerprint(b.archive));
    const SearchResult c = genetic_search(schema, 4, evaluate, 100);
    CHECK(archive_fingerprint(a.archive) != archive_fingerprint(c.archive));
}

TEST_CASE("parallel evaluation commits in candidate order") {
    const StrategySchema schema = default_schema();
    const EvaluateFn evaluate = [](const StrategyConfig& cfg, int) -> EvalOutcome {
        return prox_landscape(cfg);
    };
    SearchParams params;
    params.jobs = 1;
    const SearchResult serial = genetic_search(schema, 4, evaluate, 5, params);
    params.jobs = 4;
    const SearchResult parallel = genetic_search(schema, 4, evaluate, 5, params);
    CHECK(archive_fingerprint(serial.archive) == archive_fingerprint(parallel.archive));
}

TEST_CASE("elitism monotonicity of the running best") {
    const StrategySchema schema = default_schema();
    const SearchResult result = genetic_search(
        schema, 6, [](const StrategyConfig& cfg, int) { return prox_landscape(cfg); }, 3);
    double running = -1.0, prefix_best = -1.0;
    for (const FitnessRecord& r : result.archive.records) {
        prefix_best = std::max(prefix_best, r.fitness);
        CHECK(prefix_best >= running);
        running = prefix_best;
    }
    CHECK(result.best.fitness == prefix_best);
}

TEST_CASE("final argmax breaks ties by earliest evaluation") {
    const StrategySchema schema = default_schema();
    // constant landscape: everything ties, the first record must win
    const SearchResult result = genetic_search(
        schema, 4, [](const StrategyConfig&, int) { return 0.5; }, 8);
    CHECK(result.best.config == result.archive.records[0].config);
}

TEST_CASE("reference search envelope") {
    const StrategySchema schema = default_schema();
    int evaluations = 0;
    const ReferenceResult result = reference_search(
        schema, 4,
        [&](const StrategyConfig& cfg, int) -> EvalOutcome {
            ++evaluations;
            return prox_landscape(cfg);
        },
        50, 21);
    CHECK(evaluations == 50);
    CHECK(result.archive.records.size() == 50);
    CHECK(result.archive.hashes.size() == 50);
    CHECK(result.best.fitness >= result.worst.fitness);
}

TEST_CASE("mutation dedup stall falls back to uniform sampling") {
    // Degenerate schema: only parameterless strategies, so every mutation of
    // an elite is a duplicate. The fallback must still fill the budget when
    // possible, and a too-small space must raise.
    StrategySchema tiny;
    tiny.entries[StrategyName::fed_avg] = {};
    tiny.entries[StrategyName::fed_median] = {};
    ParamSpec beta;
    beta.name = "beta";
    beta.kind = ParamKind::real;
    beta.lo = 0.0;
    beta.hi = 0.49;
    beta.def = 0.2;
    tiny.entries[StrategyName::fed_trimmed_avg] = {beta};
    ParamSpec mu;
    mu.name = "proximal_mu";
    mu.kind = ParamKind::real;
    mu.lo = 0.0;
    mu.hi = 1.0;
    mu.def = 0.1;
    tiny.entries[StrategyName::fed_prox] = {mu};
    ParamSpec f = beta;
    f.name = "num_malicious_clients";
    f.kind = ParamKind::integer;
    f.lo = 0;
    f.hi = 0;
    f.hi_rel_n = true;
    f.hi_off = -3;
    ParamSpec m = f;
    m.name = "num_clients_to_keep";
    m.lo = 1;
    m.hi_rel_n = true;
    m.hi_off = 0;
    tiny.entries[StrategyName::krum] = {f, m};

    // Parameterless strategies score best, so both elites are parameterless
    // and generation 2 can only proceed through the fallback.
    const EvaluateFn evaluate = [](const StrategyConfig& cfg, int) -> EvalOutcome {
        return cfg.params.empty() ? 1.0 : 0.1;
    };
    const SearchResult result = genetic_search(tiny, 4, evaluate, 1);
    CHECK(result.archive.records.size() == 8);
    bool any_fallback = false;
    for (const FitnessRecord& r : result.archive.records) any_fallback |= r.via_fallback;
    CHECK(any_fallback);
}

TEST_CASE("reference envelope brackets the genetic best on label skew") {
    const StrategySchema schema = default_schema();
    int bracketed = 0;
    for (std::uint64_t s = 1; s <= 10; ++s) {
        const Dataset pool = generate_synthetic(1200, 40, 2, derive_seed(s, "data"), 1.0);
        const auto parts =
            partition_label_skew(pool, {0.9, 0.7, 0.5, 0.1}, 250, derive_seed(s, "part"));
        const EvaluateFn evaluate = [&](const StrategyConfig& cfg, int) -> EvalOutcome {
            RunConfig rc;
            rc.strategy = cfg;
            rc.rounds = 10;
            rc.architecture = {40, 32, 2};
            rc.seed = derive_seed(s, "trial_run", hash_config(cfg));
            rc.jobs = 2;
            return fitness(run_federation(rc, parts));
        };
        const ReferenceResult envelope =
            reference_search(schema, 4, evaluate, 50, derive_seed(s, "hporef"));
        const SearchResult genetic = genetic_search(schema, 4, evaluate, derive_seed(s, "gen"));
        if (envelope.worst.fitness <= genetic.best.fitness &&
            genetic.best.fitness <= envelope.best.fitness + 0.02) {
            ++bracketed;
        }
    }
    CHECK(bracketed >= 8);
}

TEST_CASE("search space exhaustion raises") {
    StrategySchema tiny;
    tiny.entries[StrategyName::fed_avg] = {};
    tiny.entries[StrategyName::fed_median] = {};
    // only two unique configs exist; the 8-evaluation budget cannot be met
    SearchParams params;
    params.max_draw_attempts = 2000;
    CHECK_THROWS_AS(genetic_search(
                        tiny, 4, [](const StrategyConfig&, int) { return 0.5; }, 3, params),
                    SearchSpaceExhausted);
}

TEST_SUITE_END();
