#include "fedsel/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fedsel/rng.hpp"

namespace fedsel {

namespace {

constexpr int kReferenceTrials = 50;

template <typename T>
T field_or(const nlohmann::json& j, const std::string& key, const T& fallback,
           const std::string& path) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception& e) {
        throw ValidationError("config field '" + path + "': " + e.what());
    }
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
    return buf;
}

std::string short_hash(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08llx",
                  static_cast<unsigned long long>(fnv1a64(text) & 0xffffffffull));
    return buf;
}

std::string format_fitness(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_metrics_file(const RunResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    write_metrics_csv(result, out);
}

void write_model_file(const RunResult& result, const std::filesystem::path& path) {
    if (result.status != RunStatus::ok) return;
    std::ofstream out(path);
    save_params(result.final_params, out);
}

nlohmann::json run_summary_json(const StrategyConfig& config, const RunResult& result) {
    nlohmann::json j;
    j["strategy"] = config.to_text();
    j["status"] = result.status == RunStatus::ok ? "ok" : "failed";
    if (!result.failure_reason.empty()) j["failure_reason"] = result.failure_reason;
    j["rounds_recorded"] = result.weighted_accuracy.size();
    if (!result.weighted_accuracy.empty()) {
        j["final_weighted_accuracy"] = result.weighted_accuracy.back();
    }
    if (result.status == RunStatus::ok && result.weighted_accuracy.size() >= 5) {
        j["fitness"] = fitness(result);
    } else if (result.status == RunStatus::failed) {
        j["fitness"] = 0.0;
    }
    return j;
}

std::unique_ptr<CompletionBackend> make_backend(const ExperimentConfig& cfg,
                                                const RunDirectory& dir) {
    if (cfg.backend.kind == "mock") return std::make_unique<RuleMockBackend>();
    if (cfg.backend.kind == "replay") {
        std::ifstream in(cfg.backend.replay_file);
        if (!in) {
            throw ValidationError("backend.replay_file: cannot open '" + cfg.backend.replay_file +
                                  "'");
        }
        std::stringstream buffer;
        buffer << in.rdbuf();
        const std::string content = buffer.str();
        std::vector<std::string> responses;
        const std::size_t first = content.find_first_not_of(" \t\r\n");
        if (first != std::string::npos && content[first] == '[') {
            try {
                for (const auto& item : nlohmann::json::parse(content)) {
                    responses.push_back(item.get<std::string>());
                }
            } catch (const std::exception& e) {
                throw ValidationError("backend.replay_file: bad JSON array: " +
                                      std::string(e.what()));
            }
        } else {
            std::istringstream lines(content);
            std::string line;
            while (std::getline(lines, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (!line.empty()) responses.push_back(line);
            }
        }
        if (responses.empty()) {
            throw ValidationError("backend.replay_file: no responses in '" +
                                  cfg.backend.replay_file + "'");
        }
        return std::make_unique<ScriptedBackend>(std::move(responses));
    }
    if (cfg.backend.kind == "http") {
        HttpBackendConfig http;
        http.base_url = cfg.backend.base_url;
        http.path = cfg.backend.path;
        http.model = cfg.backend.model;
        http.timeout_s = cfg.backend.timeout_s;
        const char* key = std::getenv("FEDSEL_LLM_API_KEY");
        http.api_key = key == nullptr ? "" : key;
        const std::filesystem::path log_path = dir.root / "http_log.jsonl";
        http.wire_log = [log_path](const std::string& entry) {
            std::ofstream out(log_path, std::ios::app);
            out << entry << "\n";
        };
        return std::make_unique<HttpBackend>(std::move(http));
    }
    throw ValidationError("backend.kind: expected mock, replay, or http, got '" +
                          cfg.backend.kind + "'");
}

struct ArchiveCacheEntry {
    double fitness = 0.0;
    std::string run_ref;
};

std::unordered_map<std::uint64_t, ArchiveCacheEntry> load_archive_cache(
    const std::filesystem::path& archive_path, const StrategySchema& schema, int n_clients) {
    std::unordered_map<std::uint64_t, ArchiveCacheEntry> cache;
    std::ifstream in(archive_path);
    if (!in) return cache;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t tab1 = line.find('\t');
        const std::size_t tab2 = tab1 == std::string::npos ? std::string::npos
                                                           : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) continue;
        try {
            const StrategyConfig config =
                validate_config(line.substr(0, tab1), schema, n_clients);
            ArchiveCacheEntry entry;
            entry.fitness = std::strtod(line.c_str() + tab1 + 1, nullptr);
            entry.run_ref = line.substr(tab2 + 1);
            cache[hash_config(config)] = entry;
        } catch (const std::exception&) {
            // damaged line: ignore, the trial will be re-run
        }
    }
    return cache;
}

std::string archive_line(const StrategyConfig& config, double fit, const std::string& ref) {
    return config.to_text() + "\t" + format_fitness(fit) + "\t" + ref;
}

double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json noise = nlohmann::json::array();
    for (const NoiseSpec& n : cfg.partition.noise) noise.push_back({n.mean, n.stddev});
    return {
        {"seed", cfg.seed},
        {"rounds", cfg.rounds},
        {"jobs", cfg.jobs},
        {"out_dir", cfg.out_dir},
        {"data",
         {{"source", cfg.data.source},
          {"samples", cfg.data.samples},
          {"features", cfg.data.features},
          {"classes", cfg.data.classes},
          {"separation", cfg.data.separation},
          {"csv", cfg.data.csv_path},
          {"label_column", cfg.data.label_column}}},
        {"partition",
         {{"scenario", to_string(cfg.partition.scenario)},
          {"n_clients", cfg.partition.n_clients},
          {"proportions", cfg.partition.proportions},
          {"client_size", cfg.partition.client_size},
          {"noise", noise},
          {"flip_fraction", cfg.partition.flip_fraction},
          {"alpha", cfg.partition.alpha},
          {"target_client", cfg.partition.target_client}}},
        {"train",
         {{"local_epochs", cfg.train.local_epochs},
          {"learning_rate", cfg.train.learning_rate},
          {"batch_size", cfg.train.batch_size},
          {"proximal_mu", cfg.train.proximal_mu}}},
        {"hidden", cfg.hidden},
        {"strategy", cfg.strategy_text},
        {"backend",
         {{"kind", cfg.backend.kind},
          {"base_url", cfg.backend.base_url},
          {"path", cfg.backend.path},
          {"model", cfg.backend.model},
          {"timeout_s", cfg.backend.timeout_s},
          {"backoff_ms", cfg.backend.backoff_ms},
          {"replay_file", cfg.backend.replay_file}}},
        {"describe", cfg.describe},
        {"bench_repetitions", cfg.bench_repetitions},
        {"detect",
         {{"tau_label", cfg.thresholds.tau_label},
          {"tau_feat", cfg.thresholds.tau_feat},
          {"rep_threshold", cfg.thresholds.rep_threshold}}},
    };
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.seed = field_or<std::uint64_t>(j, "seed", cfg.seed, "seed");
    cfg.rounds = field_or<int>(j, "rounds", cfg.rounds, "rounds");
    cfg.jobs = field_or<int>(j, "jobs", cfg.jobs, "jobs");
    cfg.out_dir = field_or<std::string>(j, "out_dir", cfg.out_dir, "out_dir");

    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg.data.source = field_or<std::string>(d, "source", cfg.data.source, "data.source");
        cfg.data.samples = field_or<int>(d, "samples", cfg.data.samples, "data.samples");
        cfg.data.features = field_or<int>(d, "features", cfg.data.features, "data.features");
        cfg.data.classes = field_or<int>(d, "classes", cfg.data.classes, "data.classes");
        cfg.data.separation =
            field_or<double>(d, "separation", cfg.data.separation, "data.separation");
        cfg.data.csv_path = field_or<std::string>(d, "csv", cfg.data.csv_path, "data.csv");
        cfg.data.label_column =
            field_or<std::string>(d, "label_column", cfg.data.label_column, "data.label_column");
    }
    if (j.contains("partition")) {
        const auto& p = j.at("partition");
        const std::string scenario =
            field_or<std::string>(p, "scenario", to_string(cfg.partition.scenario),
                                  "partition.scenario");
        const auto parsed = scenario_from_string(scenario);
        if (!parsed) {
            throw ValidationError("config field 'partition.scenario': unknown scenario '" +
                                  scenario + "'");
        }
        cfg.partition.scenario = *parsed;
        cfg.partition.n_clients =
            field_or<int>(p, "n_clients", cfg.partition.n_clients, "partition.n_clients");
        cfg.partition.proportions = field_or<std::vector<double>>(
            p, "proportions", cfg.partition.proportions, "partition.proportions");
        cfg.partition.client_size =
            field_or<int>(p, "client_size", cfg.partition.client_size, "partition.client_size");
        if (p.contains("noise")) {
            cfg.partition.noise.clear();
            try {
                for (const auto& item : p.at("noise")) {
                    cfg.partition.noise.push_back(
                        {item.at(0).get<double>(), item.at(1).get<double>()});
                }
            } catch (const std::exception& e) {
                throw ValidationError(std::string("config field 'partition.noise': ") + e.what());
            }
        }
        cfg.partition.flip_fraction = field_or<double>(p, "flip_fraction",
                                                       cfg.partition.flip_fraction,
                                                       "partition.flip_fraction");
        cfg.partition.alpha = field_or<double>(p, "alpha", cfg.partition.alpha, "partition.alpha");
        cfg.partition.target_client = field_or<int>(p, "target_client",
                                                    cfg.partition.target_client,
                                                    "partition.target_client");
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        cfg.train.local_epochs =
            field_or<int>(t, "local_epochs", cfg.train.local_epochs, "train.local_epochs");
        cfg.train.learning_rate = field_or<double>(t, "learning_rate", cfg.train.learning_rate,
                                                   "train.learning_rate");
        cfg.train.batch_size =
            field_or<int>(t, "batch_size", cfg.train.batch_size, "train.batch_size");
        cfg.train.proximal_mu =
            field_or<double>(t, "proximal_mu", cfg.train.proximal_mu, "train.proximal_mu");
    }
    cfg.hidden = field_or<std::vector<int>>(j, "hidden", cfg.hidden, "hidden");
    cfg.strategy_text = field_or<std::string>(j, "strategy", cfg.strategy_text, "strategy");
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        cfg.backend.kind = field_or<std::string>(b, "kind", cfg.backend.kind, "backend.kind");
        cfg.backend.base_url =
            field_or<std::string>(b, "base_url", cfg.backend.base_url, "backend.base_url");
        cfg.backend.path = field_or<std::string>(b, "path", cfg.backend.path, "backend.path");
        cfg.backend.model = field_or<std::string>(b, "model", cfg.backend.model, "backend.model");
        cfg.backend.timeout_s =
            field_or<int>(b, "timeout_s", cfg.backend.timeout_s, "backend.timeout_s");
        cfg.backend.backoff_ms =
            field_or<int>(b, "backoff_ms", cfg.backend.backoff_ms, "backend.backoff_ms");
        cfg.backend.replay_file = field_or<std::string>(b, "replay_file", cfg.backend.replay_file,
                                                        "backend.replay_file");
    }
    cfg.describe = field_or<std::string>(j, "describe", cfg.describe, "describe");
    cfg.bench_repetitions =
        field_or<int>(j, "bench_repetitions", cfg.bench_repetitions, "bench_repetitions");
    if (j.contains("detect")) {
        const auto& d = j.at("detect");
        cfg.thresholds.tau_label =
            field_or<double>(d, "tau_label", cfg.thresholds.tau_label, "detect.tau_label");
        cfg.thresholds.tau_feat =
            field_or<double>(d, "tau_feat", cfg.thresholds.tau_feat, "detect.tau_feat");
        cfg.thresholds.rep_threshold = field_or<int>(d, "rep_threshold",
                                                     cfg.thresholds.rep_threshold,
                                                     "detect.rep_threshold");
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config file: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("config file '" + path + "': " + e.what());
    }
    return experiment_from_json(j);
}

void validate_experiment(const ExperimentConfig& cfg, Mode mode) {
    if (cfg.out_dir.empty()) throw ValidationError("out_dir: must not be empty");
    if (cfg.jobs < 1) throw ValidationError("jobs: must be >= 1");
    if (cfg.rounds < 1) throw ValidationError("rounds: must be >= 1");

    const bool computes_fitness =
        mode == Mode::search || mode == Mode::hpo_ref || mode == Mode::bench;
    if (computes_fitness && cfg.rounds < 5) {
        throw ValidationError("rounds: must be >= 5 when fitness is computed");
    }

    if (cfg.partition.n_clients < 2) throw ValidationError("partition.n_clients: must be >= 2");
    const bool needs_detectors = mode == Mode::detect || mode == Mode::recommend ||
                                 mode == Mode::search || mode == Mode::hpo_ref ||
                                 mode == Mode::bench;
    if (needs_detectors && cfg.partition.n_clients < 3) {
        throw ValidationError("partition.n_clients: must be >= 3 for this mode");
    }

    if (cfg.data.source == "synthetic") {
        if (cfg.data.classes < 2) throw ValidationError("data.classes: must be >= 2");
        if (cfg.data.samples < cfg.data.classes) {
            throw ValidationError("data.samples: must be >= data.classes");
        }
        if (cfg.data.features < 2) throw ValidationError("data.features: must be >= 2");
    } else if (cfg.data.source == "csv") {
        if (cfg.data.csv_path.empty()) {
            throw ValidationError("data.csv: required when data.source is 'csv'");
        }
    } else {
        throw ValidationError("data.source: expected 'synthetic' or 'csv', got '" +
                              cfg.data.source + "'");
    }

    if (cfg.partition.scenario == Scenario::label_skew) {
        if (static_cast<int>(cfg.partition.proportions.size()) != cfg.partition.n_clients) {
            throw ValidationError("partition.proportions: need one entry per client");
        }
        for (double p : cfg.partition.proportions) {
            if (!(p > 0.0 && p < 1.0)) {
                throw ValidationError("partition.proportions: entries must lie in (0, 1)");
            }
        }
        if (cfg.partition.client_size < 1) {
            throw ValidationError("partition.client_size: must be >= 1 for label_skew");
        }
    }
    if (cfg.partition.scenario == Scenario::dirichlet && !(cfg.partition.alpha > 0.0)) {
        throw ValidationError("partition.alpha: must be > 0");
    }
    if (!(cfg.partition.flip_fraction >= 0.0 && cfg.partition.flip_fraction <= 1.0)) {
        throw ValidationError("partition.flip_fraction: must lie in [0, 1]");
    }

    if (cfg.train.local_epochs < 1) throw ValidationError("train.local_epochs: must be >= 1");
    if (cfg.train.batch_size < 1) throw ValidationError("train.batch_size: must be >= 1");
    if (cfg.train.learning_rate < 0.0) throw ValidationError("train.learning_rate: must be >= 0");
    if (cfg.train.proximal_mu < 0.0) throw ValidationError("train.proximal_mu: must be >= 0");
    for (int h : cfg.hidden) {
        if (h < 1) throw ValidationError("hidden: layer sizes must be >= 1");
    }

    if (mode == Mode::recommend) {
        if (cfg.backend.kind != "mock" && cfg.backend.kind != "replay" &&
            cfg.backend.kind != "http") {
            throw ValidationError("backend.kind: expected mock, replay, or http");
        }
        if (cfg.backend.kind == "replay" && cfg.backend.replay_file.empty()) {
            throw ValidationError("backend.replay_file: required for the replay backend");
        }
        if (cfg.backend.kind == "http" && cfg.backend.base_url.empty()) {
            throw ValidationError("backend.base_url: required for the http backend");
        }
    }
    if (mode == Mode::bench && cfg.bench_repetitions < 1) {
        throw ValidationError("bench_repetitions: must be >= 1");
    }
}

Dataset load_experiment_data(const ExperimentConfig& cfg) {
    if (cfg.data.source == "csv") {
        return load_csv(cfg.data.csv_path, cfg.data.label_column);
    }
    return generate_synthetic(cfg.data.samples, cfg.data.features, cfg.data.classes,
                              derive_seed(cfg.seed, "data"), cfg.data.separation);
}

std::vector<ClientPartition> build_experiment_partitions(const ExperimentConfig& cfg,
                                                         const Dataset& ds) {
    PartitionSpec spec = cfg.partition;
    spec.seed = derive_seed(cfg.seed, "partition");
    return make_partitions(ds, spec);
}

std::vector<int> resolve_architecture(const ExperimentConfig& cfg, const Dataset& ds) {
    std::vector<int> arch;
    arch.push_back(static_cast<int>(ds.n_features));
    for (int h : cfg.hidden) arch.push_back(h);
    arch.push_back(ds.n_classes());
    return arch;
}

RunDirectory RunDirectory::create(const std::string& base_dir, const std::string& tag,
                                  const nlohmann::json& config_snapshot) {
    const std::string snapshot = config_snapshot.dump(2);
    const std::string stem = timestamp_utc() + "_" + tag + "_" + short_hash(snapshot);
    std::filesystem::create_directories(base_dir);
    std::filesystem::path root = std::filesystem::path(base_dir) / stem;
    for (int suffix = 1; std::filesystem::exists(root); ++suffix) {
        root = std::filesystem::path(base_dir) / (stem + "-" + std::to_string(suffix));
    }
    std::filesystem::create_directories(root);
    RunDirectory dir{root};
    dir.write_text("config.json", snapshot + "\n");
    return dir;
}

RunDirectory RunDirectory::open(const std::filesystem::path& existing) {
    if (!std::filesystem::is_directory(existing)) {
        throw ValidationError("run directory '" + existing.string() + "' does not exist");
    }
    return RunDirectory{existing};
}

void RunDirectory::write_text(const std::string& name, const std::string& content) const {
    std::ofstream out(root / name);
    out << content;
}

void RunDirectory::write_json(const std::string& name, const nlohmann::json& value) const {
    write_text(name, value.dump(2) + "\n");
}

void RunDirectory::append_line(const std::string& name, const std::string& line) const {
    std::ofstream out(root / name, std::ios::app);
    out << line << "\n";
}

CommandOutcome cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_path,
                            std::ostream& out) {
    if (out_path.empty()) throw ValidationError("gen-data: output path required");
    if (cfg.data.classes < 2) throw ValidationError("data.classes: must be >= 2");
    if (cfg.data.samples < cfg.data.classes) {
        throw ValidationError("data.samples: must be >= data.classes");
    }
    const Dataset ds = generate_synthetic(cfg.data.samples, cfg.data.features, cfg.data.classes,
                                          derive_seed(cfg.seed, "data"), cfg.data.separation);
    // Snapshot first, then the data.
    std::ofstream snap(out_path + ".config.json");
    snap << to_json(cfg).dump(2) << "\n";
    snap.close();
    save_csv(ds, out_path);
    out << "wrote " << ds.n_samples() << " samples x " << ds.n_features << " features to "
        << out_path << "\n";
    nlohmann::json summary = {{"samples", ds.n_samples()},
                              {"features", ds.n_features},
                              {"classes", ds.n_classes()},
                              {"path", out_path}};
    return {std::filesystem::path(out_path).parent_path(), summary};
}

CommandOutcome cmd_partition(const ExperimentConfig& cfg, std::ostream& out) {
    validate_experiment(cfg, Mode::run);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    RunDirectory dir = RunDirectory::create(cfg.out_dir, "partition", to_json(cfg));

    nlohmann::json clients = nlohmann::json::array();
    for (const ClientPartition& p : parts) {
        const std::string name = "client_" + std::to_string(p.client_id) + ".csv";
        save_csv(p.data, (dir.root / name).string());
        nlohmann::json counts = nlohmann::json::array();
        std::vector<int> per_class(static_cast<std::size_t>(std::max(p.data.n_classes(), 2)), 0);
        for (int y : p.data.labels) per_class[static_cast<std::size_t>(y)]++;
        for (int c : per_class) counts.push_back(c);
        clients.push_back({{"client_id", p.client_id},
                           {"samples", p.data.n_samples()},
                           {"class_counts", counts},
                           {"file", name}});
        out << "client " << p.client_id << ": " << p.data.n_samples() << " samples\n";
    }
    nlohmann::json summary = {{"scenario", to_string(cfg.partition.scenario)},
                              {"clients", clients}};
    dir.write_json("summary.json", summary);
    return {dir.root, summary};
}

CommandOutcome cmd_detect(const ExperimentConfig& cfg, std::ostream& out) {
    validate_experiment(cfg, Mode::detect);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    const std::vector<int> arch = resolve_architecture(cfg, ds);
    RunDirectory dir = RunDirectory::create(cfg.out_dir, "detect", to_json(cfg));

    const HeterogeneityReport report = build_report(parts, arch, derive_seed(cfg.seed, "detect"),
                                                    cfg.thresholds, cfg.jobs);
    dir.write_json("report.json", report_to_json(report));
    const PromptPair prompts = build_prompts(report, default_schema(), cfg.partition.n_clients);
    dir.write_text("report_format_b.txt", prompts.user + "\n");

    const auto yes_no = [](bool v) { return v ? "Yes" : "No"; };
    out << "Label Skew: " << yes_no(report.label_skew) << "\n"
        << "Feature Skew: " << yes_no(report.feature_skew) << "\n"
        << "Outlier Risk: " << yes_no(report.outlier_risk) << "\n";

    nlohmann::json summary = {{"label_skew", report.label_skew},
                              {"feature_skew", report.feature_skew},
                              {"outlier_risk", report.outlier_risk},
                              {"max_jsd", report.max_jsd},
                              {"max_centroid_distance", report.max_centroid_distance}};
    dir.write_json("summary.json", summary);
    return {dir.root, summary};
}

CommandOutcome cmd_recommend(const ExperimentConfig& cfg, std::ostream& out) {
    validate_experiment(cfg, Mode::recommend);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    const std::vector<int> arch = resolve_architecture(cfg, ds);
    RunDirectory dir = RunDirectory::create(cfg.out_dir, "recommend", to_json(cfg));

    const StrategySchema schema = default_schema();
    const int n = cfg.partition.n_clients;

    PromptPair prompts;
    if (cfg.describe.empty()) {
        const HeterogeneityReport report = build_report(parts, arch, derive_seed(cfg.seed, "detect"),
                                                        cfg.thresholds, cfg.jobs);
        dir.write_json("report.json", report_to_json(report));
        prompts = build_prompts(report, schema, n);
        dir.write_text("report_format_b.txt", prompts.user + "\n");
    } else {
        prompts = build_prompts_with_description(cfg.describe, schema, n);
    }

    nlohmann::json transcript = nlohmann::json::array();
    AdvisorOptions options;
    options.backoff_ms = cfg.backend.backoff_ms;
    options.transcript = [&transcript](const std::string& event, const std::string& detail) {
        transcript.push_back({{"event", event}, {"detail", detail}});
    };
    const std::unique_ptr<CompletionBackend> backend = make_backend(cfg, dir);

    AdvisorOutcome outcome;
    try {
        outcome = recommend_with_prompts(prompts, schema, n, *backend, options);
    } catch (...) {
        dir.write_json("advisor_transcript.json", transcript);
        throw;
    }
    dir.write_json("advisor_transcript.json", transcript);

    RunConfig rc;
    rc.strategy = outcome.config;
    rc.rounds = cfg.rounds;
    rc.train = cfg.train;
    rc.architecture = arch;
    rc.seed = derive_seed(cfg.seed, "run");
    rc.jobs = cfg.jobs;
    const RunResult result = run_federation(rc, parts);
    write_metrics_file(result, dir.root / "metrics.csv");
    write_model_file(result, dir.root / "model.txt");

    nlohmann::json summary = run_summary_json(outcome.config, result);
    summary["attempts"] = outcome.attempts;
    dir.write_json("summary.json", summary);

    out << "recommended: " << outcome.config.to_text() << " (attempt " << outcome.attempts
        << ")\n";
    if (result.status == RunStatus::ok) {
        out << "final weighted accuracy: " << result.weighted_accuracy.back() << "\n";
    } else {
        out << "run failed: " << result.failure_reason << "\n";
    }
    return {dir.root, summary};
}

CommandOutcome cmd_run(const ExperimentConfig& cfg, std::ostream& out) {
    validate_experiment(cfg, Mode::run);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    const std::vector<int> arch = resolve_architecture(cfg, ds);
    const StrategyConfig strategy =
        validate_config(cfg.strategy_text, default_schema(), cfg.partition.n_clients);
    RunDirectory dir = RunDirectory::create(cfg.out_dir, "run", to_json(cfg));

    RunConfig rc;
    rc.strategy = strategy;
    rc.rounds = cfg.rounds;
    rc.train = cfg.train;
    rc.architecture = arch;
    rc.seed = derive_seed(cfg.seed, "run");
    rc.jobs = cfg.jobs;
    const RunResult result = run_federation(rc, parts);
    write_metrics_file(result, dir.root / "metrics.csv");
    write_model_file(result, dir.root / "model.txt");
    const nlohmann::json summary = run_summary_json(strategy, result);
    dir.write_json("summary.json", summary);

    out << "strategy: " << strategy.to_text() << "\n";
    if (result.status == RunStatus::ok) {
        out << "final weighted accuracy: " << result.weighted_accuracy.back() << "\n";
        if (summary.contains("fitness")) {
            out << "fitness: " << summary["fitness"].get<double>() << "\n";
        }
    } else {
        out << "run failed: " << result.failure_reason << "\n";
    }
    return {dir.root, summary};
}

namespace {

// Evaluator shared by search/hpo-ref: one engine run per unique config, one
// trial directory per fresh evaluation, one archive line per result. Cached
// hashes (from a resumed archive) are served without re-running.
EvaluateFn make_persisting_evaluator(
    const ExperimentConfig& cfg, const std::vector<ClientPartition>& parts,
    const std::vector<int>& arch, const RunDirectory& dir,
    std::unordered_map<std::uint64_t, ArchiveCacheEntry>& cache, int* fresh_evals) {
    return [&cfg, &parts, &arch, &dir, &cache, fresh_evals](const StrategyConfig& config,
                                                            int trial) -> EvalOutcome {
        const std::uint64_t h = hash_config(config);
        if (const auto it = cache.find(h); it != cache.end()) {
            return {it->second.fitness, it->second.run_ref};
        }
        RunConfig rc;
        rc.strategy = config;
        rc.rounds = cfg.rounds;
        rc.train = cfg.train;
        rc.architecture = arch;
        rc.seed = derive_seed(cfg.seed, "trial_run", h);
        rc.jobs = cfg.jobs;
        const RunResult result = run_federation(rc, parts);
        const double fit = fitness(result);

        const std::string trial_name = "trial_" + std::to_string(trial);
        const std::filesystem::path trial_dir = dir.root / trial_name;
        std::filesystem::create_directories(trial_dir);
        {
            std::ofstream cfg_out(trial_dir / "config.json");
            cfg_out << nlohmann::json{{"strategy", config.to_text()},
                                      {"seed", rc.seed},
                                      {"rounds", rc.rounds}}
                           .dump(2)
                    << "\n";
        }
        write_metrics_file(result, trial_dir / "metrics.csv");
        {
            std::ofstream sum_out(trial_dir / "summary.json");
            sum_out << run_summary_json(config, result).dump(2) << "\n";
        }
        dir.append_line("archive.txt", archive_line(config, fit, trial_name));
        cache[h] = {fit, trial_name};
        if (fresh_evals != nullptr) ++*fresh_evals;
        return {fit, trial_name};
    };
}

void finalize_archive_file(const RunDirectory& dir, const Archive& archive) {
    std::string content;
    for (const FitnessRecord& r : archive.records) {
        content += archive_line(r.config, r.fitness, r.run_ref) + "\n";
    }
    dir.write_text("archive.txt", content);
}

}  // namespace

CommandOutcome cmd_search(const ExperimentConfig& cfg, std::ostream& out,
                          const std::string& resume_dir) {
    validate_experiment(cfg, Mode::search);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    const std::vector<int> arch = resolve_architecture(cfg, ds);
    const StrategySchema schema = default_schema();
    const int n = cfg.partition.n_clients;

    RunDirectory dir = resume_dir.empty() ? RunDirectory::create(cfg.out_dir, "search", to_json(cfg))
                                          : RunDirectory::open(resume_dir);
    auto cache = load_archive_cache(dir.root / "archive.txt", schema, n);
    int fresh_evals = 0;
    const EvaluateFn evaluate =
        make_persisting_evaluator(cfg, parts, arch, dir, cache, &fresh_evals);

    const SearchResult result =
        genetic_search(schema, n, evaluate, derive_seed(cfg.seed, "genetic"));
    finalize_archive_file(dir, result.archive);

    nlohmann::json records = nlohmann::json::array();
    for (const FitnessRecord& r : result.archive.records) {
        records.push_back({{"strategy", r.config.to_text()},
                           {"fitness", r.fitness},
                           {"generation", r.generation},
                           {"run", r.run_ref}});
    }
    nlohmann::json summary = {{"best_strategy", result.best.config.to_text()},
                              {"best_fitness", result.best.fitness},
                              {"evaluations", result.archive.records.size()},
                              {"fresh_evaluations", fresh_evals},
                              {"records", records}};
    dir.write_json("summary.json", summary);
    out << "best: " << result.best.config.to_text() << "\n"
        << "fitness: " << result.best.fitness << "\n";
    return {dir.root, summary};
}

CommandOutcome cmd_hpo_ref(const ExperimentConfig& cfg, std::ostream& out) {
    validate_experiment(cfg, Mode::hpo_ref);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    const std::vector<int> arch = resolve_architecture(cfg, ds);
    const StrategySchema schema = default_schema();
    const int n = cfg.partition.n_clients;

    RunDirectory dir = RunDirectory::create(cfg.out_dir, "hpo-ref", to_json(cfg));
    auto cache = load_archive_cache(dir.root / "archive.txt", schema, n);
    int fresh_evals = 0;
    const EvaluateFn evaluate =
        make_persisting_evaluator(cfg, parts, arch, dir, cache, &fresh_evals);

    const ReferenceResult result = reference_search(schema, n, evaluate, kReferenceTrials,
                                                    derive_seed(cfg.seed, "hpo_ref"));
    finalize_archive_file(dir, result.archive);

    nlohmann::json summary = {{"best_strategy", result.best.config.to_text()},
                              {"best_fitness", result.best.fitness},
                              {"worst_strategy", result.worst.config.to_text()},
                              {"worst_fitness", result.worst.fitness},
                              {"trials", result.archive.records.size()},
                              {"fresh_evaluations", fresh_evals}};
    dir.write_json("summary.json", summary);
    out << "best: " << result.best.config.to_text() << " (fitness " << result.best.fitness
        << ")\n"
        << "worst: " << result.worst.config.to_text() << " (fitness " << result.worst.fitness
        << ")\n";
    return {dir.root, summary};
}

CommandOutcome cmd_bench(const ExperimentConfig& cfg, std::ostream& out) {
    validate_experiment(cfg, Mode::bench);
    const Dataset ds = load_experiment_data(cfg);
    const std::vector<ClientPartition> parts = build_experiment_partitions(cfg, ds);
    const std::vector<int> arch = resolve_architecture(cfg, ds);
    const StrategySchema schema = default_schema();
    const int n = cfg.partition.n_clients;
    RunDirectory dir = RunDirectory::create(cfg.out_dir, "bench", to_json(cfg));

    const auto run_with_seed = [&](const StrategyConfig& config, std::uint64_t seed) {
        RunConfig rc;
        rc.strategy = config;
        rc.rounds = cfg.rounds;
        rc.train = cfg.train;
        rc.architecture = arch;
        rc.seed = seed;
        rc.jobs = cfg.jobs;
        return fitness(run_federation(rc, parts));
    };
    const EvaluateFn selection_eval = [&](const StrategyConfig& config, int) -> EvalOutcome {
        return run_with_seed(config, derive_seed(cfg.seed, "trial_run", hash_config(config)));
    };
    using Clock = std::chrono::steady_clock;
    const auto seconds_since = [](Clock::time_point start) {
        return std::chrono::duration<double>(Clock::now() - start).count();
    };

    // Selection phase: each approach picks its configuration once.
    auto t0 = Clock::now();
    const ReferenceResult envelope = reference_search(schema, n, selection_eval, kReferenceTrials,
                                                      derive_seed(cfg.seed, "hpo_ref"));
    const double t_envelope = seconds_since(t0);

    t0 = Clock::now();
    const SearchResult genetic =
        genetic_search(schema, n, selection_eval, derive_seed(cfg.seed, "genetic"));
    const double t_genetic = seconds_since(t0);

    t0 = Clock::now();
    const HeterogeneityReport report = build_report(parts, arch, derive_seed(cfg.seed, "detect"),
                                                    cfg.thresholds, cfg.jobs);
    const std::unique_ptr<CompletionBackend> backend = make_backend(cfg, dir);
    AdvisorOptions options;
    options.backoff_ms = cfg.backend.backoff_ms;
    const AdvisorOutcome advisor = recommend(report, schema, n, *backend, options);
    const double t_advisor = seconds_since(t0);

    const StrategyConfig fedavg{StrategyName::fed_avg, {}};

    struct Approach {
        std::string name;
        StrategyConfig config;
        double selection_seconds;
    };
    const std::vector<Approach> approaches = {
        {"empirical_best", envelope.best.config, t_envelope},
        {"genetic", genetic.best.config, t_genetic},
        {"advisor", advisor.config, t_advisor},
        {"fedavg", fedavg, 0.0},
        {"empirical_worst", envelope.worst.config, t_envelope},
    };

    const int reps = cfg.bench_repetitions;
    nlohmann::json rows = nlohmann::json::array();
    std::ostringstream csv, table;
    csv << "approach,strategy,mean,std,repetitions,selection_seconds,run_seconds\n";
    table << std::left << std::setw(16) << "approach" << std::setw(60) << "strategy"
          << "weighted_accuracy" << "\n";

    for (const Approach& a : approaches) {
        std::vector<double> fits;
        fits.reserve(static_cast<std::size_t>(reps));
        const auto start = Clock::now();
        for (int r = 0; r < reps; ++r) {
            fits.push_back(
                run_with_seed(a.config, derive_seed(cfg.seed, "bench_rep", static_cast<std::uint64_t>(r))));
        }
        const double run_seconds = seconds_since(start);
        const double mean = mean_of(fits);
        const double std_dev = sample_std(fits, mean);
        const bool has_std = reps >= 2;  // refuse to print a std of one sample

        char mean_buf[32], std_buf[32];
        std::snprintf(mean_buf, sizeof(mean_buf), "%.4f", mean);
        std::snprintf(std_buf, sizeof(std_buf), "%.4f", std_dev);
        csv << a.name << ",\"" << a.config.to_text() << "\"," << mean_buf << ","
            << (has_std ? std_buf : "n/a") << "," << reps << "," << a.selection_seconds << ","
            << run_seconds << "\n";
        std::string strategy_text = a.config.to_text();
        strategy_text += "  ";
        table << std::left << std::setw(16) << a.name << std::setw(60) << strategy_text
              << mean_buf;
        if (has_std) table << " +/- " << std_buf;
        table << "\n";

        rows.push_back({{"approach", a.name},
                        {"strategy", a.config.to_text()},
                        {"mean", mean},
                        {"std", has_std ? nlohmann::json(std_dev) : nlohmann::json()},
                        {"repetitions", reps},
                        {"selection_seconds", a.selection_seconds},
                        {"run_seconds", run_seconds}});
    }

    dir.write_text("bench.csv", csv.str());
    dir.write_text("bench.txt", table.str());
    nlohmann::json summary = {{"repetitions", reps}, {"rows", rows}};
    dir.write_json("summary.json", summary);
    out << table.str();
    if (reps < 2) out << "(std omitted: fewer than 2 repetitions)\n";
    return {dir.root, summary};
}

nlohmann::json report_to_json(const HeterogeneityReport& report) {
    return {
        {"label_skew",
         {{"flag", report.label_skew},
          {"max_jsd", report.max_jsd},
          {"per_client_jsd", report.per_client_jsd},
          {"threshold", report.thresholds.tau_label}}},
        {"feature_skew",
         {{"flag", report.feature_skew},
          {"max_centroid_distance", report.max_centroid_distance},
          {"distance_matrix", report.centroid_distance_matrix},
          {"threshold", report.thresholds.tau_feat}}},
        {"outlier_risk",
         {{"flag", report.outlier_risk},
          {"flag_counts", report.flag_counts},
          {"rep_threshold", report.thresholds.rep_threshold}}},
    };
}

}  // namespace fedsel
