#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsel/advisor.hpp"
#include "fedsel/dataset.hpp"
#include "fedsel/detect.hpp"
#include "fedsel/engine.hpp"
#include "fedsel/search.hpp"

namespace fedsel {

/// Process exit codes shared by every subcommand.
enum ExitCode {
    kExitOk = 0,
    kExitInternal = 1,
    kExitUsage = 2,
    kExitValidation = 3,
    kExitTransport = 4,
    kExitExhaustedRetries = 5,
};

/// Invalid experiment configuration; messages carry the field path.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string source = "synthetic";  // synthetic | csv
    int samples = 1000;
    int features = 10;
    int classes = 2;
    double separation = kDefaultClassSeparation;
    std::string csv_path;
    std::string label_column = "label";
};

struct BackendSettings {
    std::string kind = "mock";  // mock | replay | http
    std::string base_url;
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4.1";
    int timeout_s = 30;
    int backoff_ms = 250;
    std::string replay_file;
};

enum class Mode { detect, recommend, run, search, hpo_ref, bench };

/// One experiment: data source, partitioning, training and backend settings.
/// Loaded from a JSON config file; CLI flags override individual fields.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    int rounds = 30;
    int jobs = 1;
    std::string out_dir = "runs";
    DataConfig data;
    PartitionSpec partition;
    TrainSettings train;
    std::vector<int> hidden = {32};
    std::string strategy_text = "{'strategy_name': 'fed_avg'}";
    BackendSettings backend;
    std::string describe;  // human-in-the-loop description, empty = automated
    int bench_repetitions = 10;
    DetectThresholds thresholds;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

/// Throws ValidationError when mode-specific requirements are not met.
void validate_experiment(const ExperimentConfig& cfg, Mode mode);

Dataset load_experiment_data(const ExperimentConfig& cfg);
std::vector<ClientPartition> build_experiment_partitions(const ExperimentConfig& cfg,
                                                         const Dataset& ds);
std::vector<int> resolve_architecture(const ExperimentConfig& cfg, const Dataset& ds);

/// Timestamped output directory; the config snapshot is written before
/// anything else so a completed directory reproduces the run.
struct RunDirectory {
    std::filesystem::path root;

    static RunDirectory create(const std::string& base_dir, const std::string& tag,
                               const nlohmann::json& config_snapshot);
    static RunDirectory open(const std::filesystem::path& existing);

    void write_text(const std::string& name, const std::string& content) const;
    void write_json(const std::string& name, const nlohmann::json& value) const;
    void append_line(const std::string& name, const std::string& line) const;
};

struct CommandOutcome {
    std::filesystem::path run_dir;
    nlohmann::json summary;
};

CommandOutcome cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_path,
                            std::ostream& out);
CommandOutcome cmd_partition(const ExperimentConfig& cfg, std::ostream& out);
CommandOutcome cmd_detect(const ExperimentConfig& cfg, std::ostream& out);
CommandOutcome cmd_recommend(const ExperimentConfig& cfg, std::ostream& out);
CommandOutcome cmd_run(const ExperimentConfig& cfg, std::ostream& out);
CommandOutcome cmd_search(const ExperimentConfig& cfg, std::ostream& out,
                          const std::string& resume_dir = "");
CommandOutcome cmd_hpo_ref(const ExperimentConfig& cfg, std::ostream& out);
CommandOutcome cmd_bench(const ExperimentConfig& cfg, std::ostream& out);

nlohmann::json report_to_json(const HeterogeneityReport& report);

}  // namespace fedsel
