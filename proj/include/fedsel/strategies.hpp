#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsel/model.hpp"

namespace fedsel {

enum class StrategyName { fed_avg, fed_prox, fed_trimmed_avg, fed_median, krum };

const char* to_string(StrategyName name);
std::optional<StrategyName> strategy_from_string(const std::string& name);

/// Round half away from zero to 4 decimal places; normalises -0 to 0.
double round4(double v);

/// An int- or real-valued hyperparameter.
struct ParamValue {
    enum class Kind { integer, real };
    Kind kind = Kind::real;
    std::int64_t int_value = 0;
    double real_value = 0.0;

    static ParamValue integer(std::int64_t v) { return {Kind::integer, v, 0.0}; }
    static ParamValue real(double v) { return {Kind::real, 0, v}; }
    double as_real() const { return kind == Kind::integer ? static_cast<double>(int_value) : real_value; }
    bool operator==(const ParamValue& o) const {
        return kind == o.kind && (kind == Kind::integer ? int_value == o.int_value
                                                        : real_value == o.real_value);
    }
};

/// A strategy name plus its typed hyperparameters; the unit of search,
/// recommendation, and execution. Canonical form keeps keys sorted and reals
/// rounded to 4 decimals.
struct StrategyConfig {
    StrategyName name = StrategyName::fed_avg;
    std::map<std::string, ParamValue> params;

    /// Single-quoted literal, e.g. {'strategy_name': 'fed_prox', 'proximal_mu': 0.1}
    std::string to_text() const;
    /// Canonical JSON used for hashing.
    std::string to_json() const;
    bool operator==(const StrategyConfig& o) const { return name == o.name && params == o.params; }
};

enum class ParamKind { integer, real };

/// One parameter's domain. Bounds and default may be offsets from the client
/// count, resolved at validation/sampling time.
struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::real;
    double lo = 0.0, hi = 0.0;
    bool lo_rel_n = false, hi_rel_n = false;
    int lo_off = 0, hi_off = 0;
    double def = 0.0;
    bool def_rel_n = false;
    int def_off = 0;

    double resolved_lo(int n) const { return lo_rel_n ? n + lo_off : lo; }
    double resolved_hi(int n) const { return hi_rel_n ? n + hi_off : hi; }
    double resolved_default(int n) const { return def_rel_n ? n + def_off : def; }
};

struct StrategySchema {
    std::map<StrategyName, std::vector<ParamSpec>> entries;

    const std::vector<ParamSpec>& specs_for(StrategyName name) const;
    /// Compact human-readable listing embedded into the advisor system prompt.
    std::string to_prompt_text() const;
};

/// fed_avg {}; fed_prox {proximal_mu in [0, 1]}; fed_trimmed_avg {beta in
/// [0, 0.49]}; fed_median {}; krum {num_malicious_clients in [0, n-3],
/// num_clients_to_keep in [1, n]}.
StrategySchema default_schema();

enum class ConfigErrorKind {
    unparseable,
    unknown_strategy,
    unknown_parameter,
    missing_parameter,
    out_of_domain,
    infeasible_for_n,
};

const char* to_string(ConfigErrorKind kind);

class ConfigError : public std::runtime_error {
public:
    ConfigError(ConfigErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}
    ConfigErrorKind kind() const { return kind_; }

private:
    ConfigErrorKind kind_;
};

/// A parsed-but-unchecked dictionary literal.
struct RawValue {
    enum class Kind { string, integer, real };
    Kind kind = Kind::string;
    std::string str;
    std::int64_t int_value = 0;
    double real_value = 0.0;
};

struct RawConfig {
    std::vector<std::pair<std::string, RawValue>> items;
};

/// Extracts the first well-formed brace-delimited map literal from free text
/// (single- or double-quoted keys/strings, bare ints, decimal reals); code
/// fences and surrounding prose are skipped. Throws ConfigError(unparseable).
RawConfig parse_config_text(const std::string& text);

/// Checks name, parameter set, types, domains, and n-dependent feasibility;
/// returns the canonicalized config. Missing or extra parameters are errors
/// (defaults are not filled in).
StrategyConfig validate_config(const RawConfig& raw, const StrategySchema& schema, int n_clients);
StrategyConfig validate_config(const StrategyConfig& config, const StrategySchema& schema,
                               int n_clients);
StrategyConfig validate_config(const std::string& text, const StrategySchema& schema,
                               int n_clients);

/// Config with every parameter at its (n-resolved) schema default.
StrategyConfig config_with_defaults(StrategyName name, const StrategySchema& schema, int n_clients);

/// Server-side aggregation dispatch:
///   fed_avg / fed_prox : num_examples-weighted coordinate mean
///   fed_median         : unweighted coordinate median (even count: mean of middles)
///   fed_trimmed_avg    : per coordinate, drop floor(beta*n) from each end, average
///   krum               : score by summed squared distances to the n-f-2 nearest
///                        updates; weighted average of the m lowest-scoring
///                        (ties by lowest client_id)
ModelParams aggregate(const StrategyConfig& config, const std::vector<ClientUpdate>& updates,
                      const ModelParams& global);

}  // namespace fedsel
