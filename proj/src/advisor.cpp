#include "fedsel/advisor.hpp"

#include <chrono>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace fedsel {

namespace {

const char* yes_no(bool v) { return v ? "Yes" : "No"; }

std::string system_prompt(const StrategySchema& schema) {
    std::ostringstream os;
    os << "You are an expert in Federated Learning who helps users decide their FL strategy "
          "and associated parameters based on the data heterogeneity they describe.\n"
          "\n"
          "Your ultimate goal is to generate a configuration that orchestrates an FL workflow "
          "with optimal predictive performance for the given heterogeneity scenario.\n"
          "\n"
          "Return format: You must return only a valid configuration in Python dictionary "
          "format.\n"
          "\n"
          "Allowed Schema:\n"
       << schema.to_prompt_text()
       << "\n"
          "\n"
          "Return only a single Python dictionary - no explanations, no extra text.\n"
          "\n"
          "Examples of valid output:\n"
          "{'strategy_name': 'fed_avg'}\n"
          "{'strategy_name': 'fed_prox', 'proximal_mu': 0.7}\n"
          "{'strategy_name': 'fed_trimmed_avg', 'beta': 0.3}\n"
          "{'strategy_name': 'krum', 'num_malicious_clients': 1, 'num_clients_to_keep': 3}\n"
          "\n"
          "Your output must be a valid Python dictionary using single quotes.";
    return os.str();
}

std::string user_preamble(int n_clients) {
    std::ostringstream os;
    os << "I have " << n_clients
       << " client devices and I've run some EDA on the risks of label skew, feature skew, "
          "and weight divergence which may indicate risks of malicious behaviour.\n"
          "\n"
          "Below are the results:\n";
    return os.str();
}

}  // namespace

PromptPair build_prompts(const HeterogeneityReport& report, const StrategySchema& schema,
                         int n_clients) {
    std::ostringstream user;
    user << user_preamble(n_clients) << "Label Skew: " << yes_no(report.label_skew) << "\n"
         << "Feature Skew: " << yes_no(report.feature_skew) << "\n"
         << "Outlier Risk: " << yes_no(report.outlier_risk);
    return {system_prompt(schema), user.str()};
}

PromptPair build_prompts_with_description(const std::string& description,
                                          const StrategySchema& schema, int n_clients) {
    std::ostringstream user;
    user << "I have " << n_clients << " client devices.\n\n" << description;
    return {system_prompt(schema), user.str()};
}

AdvisorOutcome recommend(const HeterogeneityReport& report, const StrategySchema& schema,
                         int n_clients, CompletionBackend& backend,
                         const AdvisorOptions& options) {
    return recommend_with_prompts(build_prompts(report, schema, n_clients), schema, n_clients,
                                  backend, options);
}

AdvisorOutcome recommend_with_prompts(const PromptPair& prompts, const StrategySchema& schema,
                                      int n_clients, CompletionBackend& backend,
                                      const AdvisorOptions& options) {
    std::vector<std::string> turns{prompts.user};
    std::vector<std::string> raw;
    int transport_tries = 0;

    auto log = [&](const std::string& event, const std::string& detail) {
        if (options.transcript) options.transcript(event, detail);
    };
    log("system", prompts.system);
    log("user", prompts.user);

    for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
        std::string response;
        for (;;) {
            try {
                response = backend.complete(prompts.system, turns);
                break;
            } catch (const TransportError& e) {
                ++transport_tries;
                log("transport_error", e.what());
                if (transport_tries >= options.transport_attempts) throw;
                std::this_thread::sleep_for(std::chrono::milliseconds(
                    static_cast<long>(options.backoff_ms) << (transport_tries - 1)));
            }
        }
        raw.push_back(response);
        log("response", response);
        try {
            const StrategyConfig config = validate_config(response, schema, n_clients);
            log("accepted", config.to_text());
            return {config, attempt, raw};
        } catch (const ConfigError& e) {
            log("rejected", e.what());
            std::string correction = "Your previous response was invalid: ";
            correction += e.what();
            correction +=
                ". Return only a single valid Python dictionary that matches the allowed schema.";
            turns.push_back(std::move(correction));
        }
    }
    throw ExhaustedRetriesError("no valid configuration after " +
                                    std::to_string(options.max_attempts) + " attempts",
                                raw);
}

StrategyConfig rule_mock_config(bool label_skew, bool feature_skew, bool outlier_risk,
                                int n_clients) {
    StrategyConfig cfg;
    if (outlier_risk) {
        cfg.name = StrategyName::krum;
        cfg.params["num_malicious_clients"] = ParamValue::integer(1);
        cfg.params["num_clients_to_keep"] = ParamValue::integer(n_clients - 1);
    } else if (label_skew) {
        cfg.name = StrategyName::fed_prox;
        cfg.params["proximal_mu"] = ParamValue::real(0.1);
    } else if (feature_skew) {
        cfg.name = StrategyName::fed_trimmed_avg;
        cfg.params["beta"] = ParamValue::real(0.2);
    } else {
        cfg.name = StrategyName::fed_avg;
    }
    return cfg;
}

std::string rule_mock_response(const HeterogeneityReport& report, int n_clients) {
    return rule_mock_config(report.label_skew, report.feature_skew, report.outlier_risk, n_clients)
        .to_text();
}

std::string RuleMockBackend::complete(const std::string& system,
                                      const std::vector<std::string>& user_turns) {
    (void)system;
    if (user_turns.empty()) throw TransportError("rule mock: no user prompt");
    const std::string& user = user_turns.front();

    int n_clients = 4;
    const std::size_t pos = user.find("I have ");
    if (pos != std::string::npos) {
        n_clients = std::max(std::atoi(user.c_str() + pos + 7), 3);
    }
    auto has = [&](const char* needle) { return user.find(needle) != std::string::npos; };

    bool label = has("Label Skew: Yes");
    bool feature = has("Feature Skew: Yes");
    bool outlier = has("Outlier Risk: Yes");
    const bool structured = has("Label Skew:") || has("Feature Skew:") || has("Outlier Risk:");
    if (!structured) {
        // Free-text description: fall back to keyword matching.
        std::string lower = user;
        for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        auto mentions = [&](const char* w) { return lower.find(w) != std::string::npos; };
        outlier = mentions("poison") || mentions("outlier") || mentions("malicious") ||
                  mentions("corrupt") || mentions("adversar");
        label = mentions("label skew") || mentions("imbalance") || mentions("class skew");
        feature = mentions("feature skew") || mentions("feature shift") || mentions("noise");
    }
    return rule_mock_config(label, feature, outlier, n_clients).to_text();
}

std::string ScriptedBackend::complete(const std::string& system,
                                      const std::vector<std::string>& user_turns) {
    (void)system;
    (void)user_turns;
    if (next_ >= responses_.size()) {
        throw TransportError("scripted backend: response script exhausted");
    }
    return responses_[next_++];
}

std::string HttpBackend::complete(const std::string& system,
                                  const std::vector<std::string>& user_turns) {
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "system"}, {"content", system}});
    for (const std::string& turn : user_turns) {
        messages.push_back({{"role", "user"}, {"content", turn}});
    }
    const nlohmann::json body = {
        {"model", config_.model},
        {"messages", messages},
        {"temperature", config_.temperature},
    };

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config_.api_key);
    }

    auto log_wire = [&](const std::string& status, const std::string& response_body) {
        if (!config_.wire_log) return;
        const nlohmann::json entry = {
            {"url", config_.base_url + config_.path},
            {"headers", {{"Authorization", config_.api_key.empty() ? "" : "Bearer ***redacted***"}}},
            {"request", body},
            {"status", status},
            {"response", response_body},
        };
        config_.wire_log(entry.dump());
    };

    httplib::Result res = client.Post(config_.path, headers, body.dump(), "application/json");
    if (!res) {
        log_wire("transport_failure", httplib::to_string(res.error()));
        throw TransportError("HTTP request failed: " + httplib::to_string(res.error()));
    }
    log_wire(std::to_string(res->status), res->body);
    if (res->status != 200) {
        throw TransportError("HTTP status " + std::to_string(res->status) + ": " + res->body);
    }
    try {
        const nlohmann::json parsed = nlohmann::json::parse(res->body);
        return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
        throw TransportError(std::string("malformed completion response: ") + e.what());
    }
}

}  // namespace fedsel
