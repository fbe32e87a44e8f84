#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsel/detect.hpp"
#include "fedsel/strategies.hpp"

namespace fedsel {

struct PromptPair {
    std::string system;
    std::string user;
};

/// System prompt with the serialized schema and the four few-shot output
/// examples embedded; user prompt is the fixed three-flag summary block.
PromptPair build_prompts(const HeterogeneityReport& report, const StrategySchema& schema,
                         int n_clients);

/// Human-in-the-loop variant: the free-text description replaces the
/// diagnostic block while the system prompt stays the same.
PromptPair build_prompts_with_description(const std::string& description,
                                          const StrategySchema& schema, int n_clients);

/// The backend could not be reached or returned a malformed completion;
/// distinct from validation failures of the returned configuration.
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// All attempts produced invalid configurations; carries the raw responses.
class ExhaustedRetriesError : public std::runtime_error {
public:
    ExhaustedRetriesError(const std::string& message, std::vector<std::string> responses)
        : std::runtime_error(message), raw_responses(std::move(responses)) {}
    std::vector<std::string> raw_responses;
};

/// A text-completion capability. `user_turns` holds the original prompt plus
/// any corrective follow-ups; chat backends map each to a user-role message.
class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual std::string complete(const std::string& system,
                                 const std::vector<std::string>& user_turns) = 0;
};

struct AdvisorOutcome {
    StrategyConfig config;
    int attempts = 0;
    std::vector<std::string> raw_responses;
};

struct AdvisorOptions {
    int max_attempts = 3;
    int transport_attempts = 3;
    int backoff_ms = 250;
    std::function<void(const std::string& event, const std::string& detail)> transcript;
};

/// Up to max_attempts completion/parse/validate cycles; failed validations
/// append a corrective user message naming the error. Transport failures
/// retry with exponential backoff up to transport_attempts total sends.
AdvisorOutcome recommend(const HeterogeneityReport& report, const StrategySchema& schema,
                         int n_clients, CompletionBackend& backend,
                         const AdvisorOptions& options = {});

AdvisorOutcome recommend_with_prompts(const PromptPair& prompts, const StrategySchema& schema,
                                      int n_clients, CompletionBackend& backend,
                                      const AdvisorOptions& options = {});

/// Deterministic offline mapping from report flags to a configuration text:
/// outlier risk -> krum, label skew -> fed_prox, feature skew ->
/// fed_trimmed_avg, otherwise fed_avg.
std::string rule_mock_response(const HeterogeneityReport& report, int n_clients);
StrategyConfig rule_mock_config(bool label_skew, bool feature_skew, bool outlier_risk,
                                int n_clients);

/// Backend that re-derives the rule-mock answer from the Format-B user text.
class RuleMockBackend : public CompletionBackend {
public:
    std::string complete(const std::string& system,
                         const std::vector<std::string>& user_turns) override;
};

/// Backend that replays a fixed list of responses, for tests and fixtures.
class ScriptedBackend : public CompletionBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> responses)
        : responses_(std::move(responses)) {}
    std::string complete(const std::string& system,
                         const std::vector<std::string>& user_turns) override;
    std::size_t calls() const { return next_; }

private:
    std::vector<std::string> responses_;
    std::size_t next_ = 0;
};

struct HttpBackendConfig {
    std::string base_url;                       // e.g. http://localhost:8080
    std::string path = "/v1/chat/completions";  // chat-completions endpoint
    std::string model = "gpt-4.1";
    std::string api_key;  // normally from FEDSEL_LLM_API_KEY
    int timeout_s = 30;
    double temperature = 0.0;
    // Wire log with the bearer token redacted; receives JSON text.
    std::function<void(const std::string&)> wire_log;
};

/// POSTs a chat-style body {model, messages, temperature} and extracts
/// choices[0].message.content. Any HTTP/transport/shape failure raises
/// TransportError.
class HttpBackend : public CompletionBackend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}
    std::string complete(const std::string& system,
                         const std::vector<std::string>& user_turns) override;

private:
    HttpBackendConfig config_;
};

}  // namespace fedsel
