#include "fedsel/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace fedsel {

namespace {

std::string format_real4(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    std::string s(buf);
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.push_back('0');  // keep reals distinguishable from ints
    if (s == "-0.0") s = "0.0";
    return s;
}

std::string value_text(const ParamValue& v) {
    return v.kind == ParamValue::Kind::integer ? std::to_string(v.int_value)
                                               : format_real4(v.real_value);
}

// Sorted, weighted coordinate-wise mean over the given update indices.
// Summation runs in the order given, so callers fix it to client_id order.
ModelParams weighted_mean(const std::vector<ClientUpdate>& updates,
                          const std::vector<std::size_t>& order) {
    const ModelParams& shape = updates[order.front()].params;
    double total_weight = 0.0;
    for (std::size_t u : order) total_weight += static_cast<double>(updates[u].num_examples);

    ModelParams out;
    out.layers.resize(shape.layers.size());
    for (std::size_t l = 0; l < shape.layers.size(); ++l) {
        const std::size_t len = shape.layers[l].size();
        std::vector<double>& acc = out.layers[l];
        acc.assign(len, 0.0);
#pragma omp parallel for schedule(static) if (len > 8192)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(len); ++i) {
            double s = 0.0;
            for (std::size_t u : order) {
                s += static_cast<double>(updates[u].num_examples) *
                     updates[u].params.layers[l][static_cast<std::size_t>(i)];
            }
            acc[static_cast<std::size_t>(i)] = s / total_weight;
        }
    }
    return out;
}

ModelParams coordinate_median(const std::vector<ClientUpdate>& updates,
                              const std::vector<std::size_t>& order) {
    const std::size_t n = order.size();
    ModelParams out;
    out.layers.resize(updates[order.front()].params.layers.size());
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        const std::size_t len = updates[order.front()].params.layers[l].size();
        out.layers[l].assign(len, 0.0);
        std::vector<double>& dst = out.layers[l];
#pragma omp parallel if (len > 4096)
        {
            std::vector<double> buf(n);
#pragma omp for schedule(static)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(len); ++i) {
                for (std::size_t u = 0; u < n; ++u) {
                    buf[u] = updates[order[u]].params.layers[l][static_cast<std::size_t>(i)];
                }
                std::sort(buf.begin(), buf.end());
                dst[static_cast<std::size_t>(i)] =
                    (n % 2 == 1) ? buf[n / 2] : (buf[n / 2 - 1] + buf[n / 2]) / 2.0;
            }
        }
    }
    return out;
}

ModelParams trimmed_mean(const std::vector<ClientUpdate>& updates,
                         const std::vector<std::size_t>& order, double beta) {
    const std::size_t n = order.size();
    // The nudge keeps 4-decimal betas exact at integer boundaries.
    const auto k = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n) + 1e-9));
    if (n <= 2 * k) {
        throw ConfigError(ConfigErrorKind::out_of_domain,
                          "fed_trimmed_avg: trimming removes every update (beta=" +
                              format_real4(beta) + ", n=" + std::to_string(n) + ")");
    }
    const double keep = static_cast<double>(n - 2 * k);
    ModelParams out;
    out.layers.resize(updates[order.front()].params.layers.size());
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        const std::size_t len = updates[order.front()].params.layers[l].size();
        out.layers[l].assign(len, 0.0);
        std::vector<double>& dst = out.layers[l];
#pragma omp parallel if (len > 4096)
        {
            std::vector<double> buf(n);
#pragma omp for schedule(static)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(len); ++i) {
                for (std::size_t u = 0; u < n; ++u) {
                    buf[u] = updates[order[u]].params.layers[l][static_cast<std::size_t>(i)];
                }
                std::sort(buf.begin(), buf.end());
                double s = 0.0;
                for (std::size_t u = k; u < n - k; ++u) s += buf[u];
                dst[static_cast<std::size_t>(i)] = s / keep;
            }
        }
    }
    return out;
}

ModelParams krum_aggregate(const std::vector<ClientUpdate>& updates,
                           const std::vector<std::size_t>& order, std::int64_t f, std::int64_t m) {
    const std::size_t n = order.size();
    if (static_cast<std::int64_t>(n) - f - 2 < 1) {
        throw ConfigError(ConfigErrorKind::infeasible_for_n,
                          "krum: requires n - f - 2 >= 1 (n=" + std::to_string(n) +
                              ", num_malicious_clients=" + std::to_string(f) + ")");
    }
    if (m < 1 || m > static_cast<std::int64_t>(n)) {
        throw ConfigError(ConfigErrorKind::infeasible_for_n,
                          "krum: num_clients_to_keep must lie in [1, n] (n=" + std::to_string(n) +
                              ", num_clients_to_keep=" + std::to_string(m) + ")");
    }

    // Squared L2 distances over the full flattened vector, one entry per pair.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }
    std::vector<double> dist(pairs.size(), 0.0);
#pragma omp parallel for schedule(static) if (pairs.size() * updates[order[0]].params.total_size() > 65536)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(pairs.size()); ++p) {
        const auto [i, j] = pairs[static_cast<std::size_t>(p)];
        const ModelParams& a = updates[order[i]].params;
        const ModelParams& b = updates[order[j]].params;
        double s = 0.0;
        for (std::size_t l = 0; l < a.layers.size(); ++l) {
            const double* pa = a.layers[l].data();
            const double* pb = b.layers[l].data();
            for (std::size_t c = 0; c < a.layers[l].size(); ++c) {
                const double d = pa[c] - pb[c];
                s += d * d;
            }
        }
        dist[static_cast<std::size_t>(p)] = s;
    }

    auto pair_index = [n](std::size_t i, std::size_t j) {
        if (i > j) std::swap(i, j);
        return i * n - i * (i + 1) / 2 + (j - i - 1);
    };

    // Score: sum of the n - f - 2 smallest distances to other updates,
    // accumulated in ascending order.
    const auto neighbors = static_cast<std::size_t>(static_cast<std::int64_t>(n) - f - 2);
    std::vector<double> score(n, 0.0);
    std::vector<double> drow(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) drow[c++] = dist[pair_index(i, j)];
        }
        std::sort(drow.begin(), drow.end());
        double s = 0.0;
        for (std::size_t t = 0; t < neighbors; ++t) s += drow[t];
        score[i] = s;
    }

    // Keep the m lowest scores; ties break on lowest client_id. `order` is
    // already sorted by client_id, so position order encodes the tie-break.
    std::vector<std::size_t> ranked(n);
    std::iota(ranked.begin(), ranked.end(), std::size_t{0});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    std::vector<std::size_t> kept;
    kept.reserve(static_cast<std::size_t>(m));
    for (std::int64_t t = 0; t < m; ++t) kept.push_back(order[ranked[static_cast<std::size_t>(t)]]);
    std::sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) {
        return updates[a].client_id < updates[b].client_id;
    });
    return weighted_mean(updates, kept);
}

}  // namespace

const char* to_string(StrategyName name) {
    switch (name) {
        case StrategyName::fed_avg: return "fed_avg";
        case StrategyName::fed_prox: return "fed_prox";
        case StrategyName::fed_trimmed_avg: return "fed_trimmed_avg";
        case StrategyName::fed_median: return "fed_median";
        case StrategyName::krum: return "krum";
    }
    return "?";
}

std::optional<StrategyName> strategy_from_string(const std::string& name) {
    for (StrategyName s : {StrategyName::fed_avg, StrategyName::fed_prox,
                           StrategyName::fed_trimmed_avg, StrategyName::fed_median,
                           StrategyName::krum}) {
        if (name == to_string(s)) return s;
    }
    return std::nullopt;
}

double round4(double v) {
    const double r = std::round(v * 10000.0) / 10000.0;
    return r == 0.0 ? 0.0 : r;
}

std::string StrategyConfig::to_text() const {
    std::ostringstream os;
    os << "{'strategy_name': '" << to_string(name) << "'";
    for (const auto& [key, value] : params) os << ", '" << key << "': " << value_text(value);
    os << "}";
    return os.str();
}

std::string StrategyConfig::to_json() const {
    std::ostringstream os;
    os << "{\"strategy_name\":\"" << to_string(name) << "\"";
    for (const auto& [key, value] : params) os << ",\"" << key << "\":" << value_text(value);
    os << "}";
    return os.str();
}

const std::vector<ParamSpec>& StrategySchema::specs_for(StrategyName name) const {
    static const std::vector<ParamSpec> empty;
    auto it = entries.find(name);
    return it == entries.end() ? empty : it->second;
}

std::string StrategySchema::to_prompt_text() const {
    std::ostringstream os;
    for (const auto& [name, specs] : entries) {
        os << to_string(name) << ":";
        if (specs.empty()) {
            os << " no parameters\n";
            continue;
        }
        os << "\n";
        for (const ParamSpec& p : specs) {
            os << "  " << p.name << " (" << (p.kind == ParamKind::integer ? "int" : "real")
               << " in [";
            auto bound = [&](double v, bool rel, int off) -> std::string {
                if (!rel) {
                    return p.kind == ParamKind::integer
                               ? std::to_string(static_cast<std::int64_t>(v))
                               : format_real4(v);
                }
                std::string s = "n_clients";
                if (off > 0) s += " + " + std::to_string(off);
                if (off < 0) s += " - " + std::to_string(-off);
                return s;
            };
            os << bound(p.lo, p.lo_rel_n, p.lo_off) << ", " << bound(p.hi, p.hi_rel_n, p.hi_off)
               << "], default " << bound(p.def, p.def_rel_n, p.def_off) << ")\n";
        }
    }
    std::string s = os.str();
    if (!s.empty() && s.back() == '\n') s.pop_back();
    return s;
}

StrategySchema default_schema() {
    StrategySchema schema;
    schema.entries[StrategyName::fed_avg] = {};
    schema.entries[StrategyName::fed_median] = {};
    {
        ParamSpec mu;
        mu.name = "proximal_mu";
        mu.kind = ParamKind::real;
        mu.lo = 0.0;
        mu.hi = 1.0;
        mu.def = 0.1;
        schema.entries[StrategyName::fed_prox] = {mu};
    }
    {
        ParamSpec beta;
        beta.name = "beta";
        beta.kind = ParamKind::real;
        beta.lo = 0.0;
        beta.hi = 0.49;
        beta.def = 0.2;
        schema.entries[StrategyName::fed_trimmed_avg] = {beta};
    }
    {
        ParamSpec f;
        f.name = "num_malicious_clients";
        f.kind = ParamKind::integer;
        f.lo = 0.0;
        f.hi_rel_n = true;
        f.hi_off = -3;
        f.def = 1.0;
        ParamSpec m;
        m.name = "num_clients_to_keep";
        m.kind = ParamKind::integer;
        m.lo = 1.0;
        m.hi_rel_n = true;
        m.hi_off = 0;
        m.def_rel_n = true;
        m.def_off = -1;
        schema.entries[StrategyName::krum] = {f, m};
    }
    return schema;
}

const char* to_string(ConfigErrorKind kind) {
    switch (kind) {
        case ConfigErrorKind::unparseable: return "unparseable";
        case ConfigErrorKind::unknown_strategy: return "unknown_strategy";
        case ConfigErrorKind::unknown_parameter: return "unknown_parameter";
        case ConfigErrorKind::missing_parameter: return "missing_parameter";
        case ConfigErrorKind::out_of_domain: return "out_of_domain";
        case ConfigErrorKind::infeasible_for_n: return "infeasible_for_n";
    }
    return "?";
}

namespace {

struct Cursor {
    const std::string& text;
    std::size_t pos;
    bool at_end() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    void skip_ws() {
        while (!at_end() && std::isspace(static_cast<unsigned char>(text[pos])) != 0) ++pos;
    }
};

bool parse_quoted(Cursor& c, std::string& out) {
    const char quote = c.peek();
    if (quote != '\'' && quote != '"') return false;
    ++c.pos;
    out.clear();
    while (!c.at_end() && c.peek() != quote) {
        out.push_back(c.peek());
        ++c.pos;
    }
    if (c.at_end()) return false;
    ++c.pos;  // closing quote
    return true;
}

bool parse_number(Cursor& c, RawValue& out) {
    const std::size_t start = c.pos;
    bool is_real = false;
    if (!c.at_end() && (c.peek() == '-' || c.peek() == '+')) ++c.pos;
    std::size_t digits = 0;
    while (!c.at_end() && std::isdigit(static_cast<unsigned char>(c.peek())) != 0) {
        ++c.pos;
        ++digits;
    }
    if (!c.at_end() && c.peek() == '.') {
        is_real = true;
        ++c.pos;
        while (!c.at_end() && std::isdigit(static_cast<unsigned char>(c.peek())) != 0) {
            ++c.pos;
            ++digits;
        }
    }
    if (!c.at_end() && (c.peek() == 'e' || c.peek() == 'E')) {
        is_real = true;
        ++c.pos;
        if (!c.at_end() && (c.peek() == '-' || c.peek() == '+')) ++c.pos;
        std::size_t exp_digits = 0;
        while (!c.at_end() && std::isdigit(static_cast<unsigned char>(c.peek())) != 0) {
            ++c.pos;
            ++exp_digits;
        }
        if (exp_digits == 0) return false;
    }
    if (digits == 0) return false;
    const std::string token = c.text.substr(start, c.pos - start);
    if (is_real) {
        out.kind = RawValue::Kind::real;
        out.real_value = std::strtod(token.c_str(), nullptr);
    } else {
        out.kind = RawValue::Kind::integer;
        out.int_value = std::strtoll(token.c_str(), nullptr, 10);
    }
    return true;
}

bool try_parse_dict(const std::string& text, std::size_t open_brace, RawConfig& out) {
    Cursor c{text, open_brace};
    if (c.at_end() || c.peek() != '{') return false;
    ++c.pos;
    out.items.clear();
    c.skip_ws();
    if (!c.at_end() && c.peek() == '}') return true;  // empty literal
    for (;;) {
        c.skip_ws();
        std::string key;
        if (c.at_end() || !parse_quoted(c, key)) return false;
        for (const auto& item : out.items) {
            if (item.first == key) return false;  // duplicate key
        }
        c.skip_ws();
        if (c.at_end() || c.peek() != ':') return false;
        ++c.pos;
        c.skip_ws();
        RawValue value;
        if (!c.at_end() && (c.peek() == '\'' || c.peek() == '"')) {
            if (!parse_quoted(c, value.str)) return false;
            value.kind = RawValue::Kind::string;
        } else if (!parse_number(c, value)) {
            return false;
        }
        out.items.emplace_back(key, value);
        c.skip_ws();
        if (c.at_end()) return false;
        if (c.peek() == '}') return true;
        if (c.peek() != ',') return false;
        ++c.pos;
    }
}

}  // namespace

RawConfig parse_config_text(const std::string& text) {
    for (std::size_t pos = text.find('{'); pos != std::string::npos;
         pos = text.find('{', pos + 1)) {
        RawConfig raw;
        if (try_parse_dict(text, pos, raw)) return raw;
    }
    throw ConfigError(ConfigErrorKind::unparseable,
                      "no well-formed configuration dictionary found in the response");
}

StrategyConfig validate_config(const RawConfig& raw, const StrategySchema& schema, int n_clients) {
    std::optional<std::string> name_text;
    StrategyConfig cfg;
    for (const auto& [key, value] : raw.items) {
        if (key == "strategy_name") {
            if (value.kind != RawValue::Kind::string) {
                throw ConfigError(ConfigErrorKind::unknown_strategy,
                                  "'strategy_name' must be a string");
            }
            name_text = value.str;
            continue;
        }
        switch (value.kind) {
            case RawValue::Kind::string:
                throw ConfigError(ConfigErrorKind::out_of_domain,
                                  "parameter '" + key + "' must be numeric, got a string");
            case RawValue::Kind::integer:
                cfg.params[key] = ParamValue::integer(value.int_value);
                break;
            case RawValue::Kind::real:
                cfg.params[key] = ParamValue::real(value.real_value);
                break;
        }
    }
    if (!name_text) {
        throw ConfigError(ConfigErrorKind::missing_parameter, "missing 'strategy_name'");
    }
    const auto name = strategy_from_string(*name_text);
    if (!name) {
        throw ConfigError(ConfigErrorKind::unknown_strategy,
                          "unknown strategy '" + *name_text + "'");
    }
    cfg.name = *name;
    return validate_config(cfg, schema, n_clients);
}

StrategyConfig validate_config(const StrategyConfig& config, const StrategySchema& schema,
                               int n_clients) {
    const std::vector<ParamSpec>& specs = schema.specs_for(config.name);
    StrategyConfig out;
    out.name = config.name;

    for (const auto& [key, value] : config.params) {
        const auto it = std::find_if(specs.begin(), specs.end(),
                                     [&](const ParamSpec& s) { return s.name == key; });
        if (it == specs.end()) {
            throw ConfigError(ConfigErrorKind::unknown_parameter,
                              "strategy '" + std::string(to_string(config.name)) +
                                  "' has no parameter '" + key + "'");
        }
        (void)value;
    }

    for (const ParamSpec& spec : specs) {
        const auto it = config.params.find(spec.name);
        if (it == config.params.end()) {
            throw ConfigError(ConfigErrorKind::missing_parameter,
                              "missing parameter '" + spec.name + "' for strategy '" +
                                  std::string(to_string(config.name)) + "'");
        }
        const ParamValue& given = it->second;
        const double lo = spec.resolved_lo(n_clients);
        const double hi = spec.resolved_hi(n_clients);
        if (lo > hi) {
            throw ConfigError(ConfigErrorKind::infeasible_for_n,
                              "strategy '" + std::string(to_string(config.name)) +
                                  "' is infeasible for " + std::to_string(n_clients) +
                                  " clients (empty domain for '" + spec.name + "')");
        }
        if (spec.kind == ParamKind::integer) {
            std::int64_t v = 0;
            if (given.kind == ParamValue::Kind::integer) {
                v = given.int_value;
            } else if (given.real_value == std::floor(given.real_value)) {
                v = static_cast<std::int64_t>(given.real_value);
            } else {
                throw ConfigError(ConfigErrorKind::out_of_domain,
                                  "parameter '" + spec.name + "' expects an integer, got " +
                                      std::to_string(given.real_value));
            }
            if (v < static_cast<std::int64_t>(lo) || v > static_cast<std::int64_t>(hi)) {
                const auto kind = (spec.lo_rel_n || spec.hi_rel_n)
                                      ? ConfigErrorKind::infeasible_for_n
                                      : ConfigErrorKind::out_of_domain;
                throw ConfigError(kind, "parameter '" + spec.name + "' = " + std::to_string(v) +
                                            " outside [" +
                                            std::to_string(static_cast<std::int64_t>(lo)) + ", " +
                                            std::to_string(static_cast<std::int64_t>(hi)) +
                                            "] for " + std::to_string(n_clients) + " clients");
            }
            out.params[spec.name] = ParamValue::integer(v);
        } else {
            const double v = round4(given.as_real());
            if (v < lo || v > hi) {
                const auto kind = (spec.lo_rel_n || spec.hi_rel_n)
                                      ? ConfigErrorKind::infeasible_for_n
                                      : ConfigErrorKind::out_of_domain;
                throw ConfigError(kind, "parameter '" + spec.name + "' = " + format_real4(v) +
                                            " outside [" + format_real4(lo) + ", " +
                                            format_real4(hi) + "]");
            }
            out.params[spec.name] = ParamValue::real(v);
        }
    }
    return out;
}

StrategyConfig validate_config(const std::string& text, const StrategySchema& schema,
                               int n_clients) {
    return validate_config(parse_config_text(text), schema, n_clients);
}

StrategyConfig config_with_defaults(StrategyName name, const StrategySchema& schema,
                                    int n_clients) {
    StrategyConfig cfg;
    cfg.name = name;
    for (const ParamSpec& spec : schema.specs_for(name)) {
        const double def = spec.resolved_default(n_clients);
        cfg.params[spec.name] = spec.kind == ParamKind::integer
                                    ? ParamValue::integer(static_cast<std::int64_t>(def))
                                    : ParamValue::real(round4(def));
    }
    return validate_config(cfg, schema, n_clients);
}

ModelParams aggregate(const StrategyConfig& config, const std::vector<ClientUpdate>& updates,
                      const ModelParams& global) {
    if (updates.empty()) throw std::invalid_argument("aggregate: no updates");
    for (const ClientUpdate& u : updates) {
        if (!u.params.same_shape(global)) {
            throw std::invalid_argument("aggregate: update shape mismatch for client " +
                                        std::to_string(u.client_id));
        }
        if (u.num_examples <= 0) {
            throw std::invalid_argument("aggregate: non-positive num_examples for client " +
                                        std::to_string(u.client_id));
        }
    }

    std::vector<std::size_t> order(updates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return updates[a].client_id < updates[b].client_id;
    });

    switch (config.name) {
        case StrategyName::fed_avg:
        case StrategyName::fed_prox:
            return weighted_mean(updates, order);
        case StrategyName::fed_median:
            return coordinate_median(updates, order);
        case StrategyName::fed_trimmed_avg:
            return trimmed_mean(updates, order, config.params.at("beta").as_real());
        case StrategyName::krum:
            return krum_aggregate(updates, order,
                                  config.params.at("num_malicious_clients").int_value,
                                  config.params.at("num_clients_to_keep").int_value);
    }
    throw std::invalid_argument("aggregate: unknown strategy");
}

}  // namespace fedsel
