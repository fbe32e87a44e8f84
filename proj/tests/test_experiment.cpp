#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <chrono>

#include "fedsel/experiment.hpp"
#include "fedsel/rng.hpp"

using namespace fedsel;
namespace fs = std::filesystem;

namespace {

// Small but real experiment: 3 clients, few rounds, tiny model.
ExperimentConfig small_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.seed = 5;
    cfg.rounds = 5;
    cfg.jobs = 2;
    cfg.out_dir = out_dir;
    cfg.data.samples = 300;
    cfg.data.features = 6;
    cfg.partition.n_clients = 3;
    cfg.hidden = {8};
    return cfg;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fedsel_test_" + std::to_string(Rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count())).next_u64()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

int count_dirs(const fs::path& root, const std::string& prefix) {
    int count = 0;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && entry.path().filename().string().rfind(prefix, 0) == 0) {
            ++count;
        }
    }
    return count;
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("config json round trip") {
    ExperimentConfig cfg = small_config("runs");
    cfg.partition.scenario = Scenario::label_skew;
    cfg.partition.proportions = {0.9, 0.7, 0.5, 0.1};
    cfg.partition.client_size = 100;
    cfg.partition.noise = {{0.0, 0.1}, {1.0, 0.5}};
    cfg.strategy_text = "{'strategy_name': 'fed_median'}";
    cfg.backend.kind = "http";
    cfg.backend.base_url = "http://localhost:9";

    const ExperimentConfig back = experiment_from_json(to_json(cfg));
    CHECK(back.seed == cfg.seed);
    CHECK(back.rounds == cfg.rounds);
    CHECK(back.partition.scenario == Scenario::label_skew);
    CHECK(back.partition.proportions == cfg.partition.proportions);
    CHECK(back.partition.noise.size() == 2);
    CHECK(back.partition.noise[1].mean == 1.0);
    CHECK(back.strategy_text == cfg.strategy_text);
    CHECK(back.backend.base_url == cfg.backend.base_url);
    CHECK(back.hidden == cfg.hidden);
}

TEST_CASE("config validation names the field") {
    ExperimentConfig cfg = small_config("runs");
    cfg.rounds = 3;
    CHECK_THROWS_WITH_AS(validate_experiment(cfg, Mode::search), doctest::Contains("rounds"),
                         ValidationError);
    cfg = small_config("runs");
    cfg.partition.n_clients = 2;
    CHECK_THROWS_WITH_AS(validate_experiment(cfg, Mode::detect),
                         doctest::Contains("n_clients"), ValidationError);
    cfg = small_config("runs");
    cfg.data.source = "parquet";
    CHECK_THROWS_WITH_AS(validate_experiment(cfg, Mode::run), doctest::Contains("data.source"),
                         ValidationError);
    cfg = small_config("runs");
    cfg.backend.kind = "replay";
    CHECK_THROWS_WITH_AS(validate_experiment(cfg, Mode::recommend),
                         doctest::Contains("replay_file"), ValidationError);
}

TEST_CASE("unknown scenario in config file is rejected") {
    CHECK_THROWS_AS(experiment_from_json({{"partition", {{"scenario", "weird"}}}}),
                    ValidationError);
}

TEST_CASE("run directory writes the snapshot first and refuses clobbering") {
    TempDir tmp;
    const RunDirectory dir = RunDirectory::create(tmp.str(), "test", {{"k", 1}});
    CHECK(fs::exists(dir.root / "config.json"));
    const RunDirectory again = RunDirectory::create(tmp.str(), "test", {{"k", 1}});
    CHECK(dir.root != again.root);  // same timestamp and hash still get distinct dirs
    CHECK_THROWS_AS(RunDirectory::open(tmp.path / "missing"), ValidationError);
}

TEST_CASE("cmd_run persists metrics and summary") {
    TempDir tmp;
    std::ostringstream out;
    const ExperimentConfig cfg = small_config(tmp.str());
    const CommandOutcome outcome = cmd_run(cfg, out);
    CHECK(fs::exists(outcome.run_dir / "config.json"));
    CHECK(fs::exists(outcome.run_dir / "metrics.csv"));
    CHECK(fs::exists(outcome.run_dir / "summary.json"));
    CHECK(fs::exists(outcome.run_dir / "model.txt"));
    CHECK(outcome.summary.at("status") == "ok");
    CHECK(outcome.summary.at("rounds_recorded") == 5);
    CHECK(out.str().find("final weighted accuracy") != std::string::npos);

    std::ifstream metrics(outcome.run_dir / "metrics.csv");
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "round,weighted_accuracy,client_0_acc,client_1_acc,client_2_acc");
}

TEST_CASE("cmd_run rejects a bad strategy literal") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.strategy_text = "{'strategy_name': 'krum', 'num_malicious_clients': 5, "
                        "'num_clients_to_keep': 1}";
    CHECK_THROWS_AS(cmd_run(cfg, out), ConfigError);
}

TEST_CASE("cmd_detect writes report artifacts and prints flags") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.partition.n_clients = 4;
    cfg.data.samples = 600;
    const CommandOutcome outcome = cmd_detect(cfg, out);
    CHECK(fs::exists(outcome.run_dir / "report.json"));
    CHECK(fs::exists(outcome.run_dir / "report_format_b.txt"));
    CHECK(out.str().find("Label Skew: ") != std::string::npos);
    CHECK(out.str().find("Feature Skew: ") != std::string::npos);
    CHECK(out.str().find("Outlier Risk: ") != std::string::npos);

    std::ifstream format_b(outcome.run_dir / "report_format_b.txt");
    std::stringstream buffer;
    buffer << format_b.rdbuf();
    CHECK(buffer.str().find("I have 4 client devices") != std::string::npos);
}

TEST_CASE("cmd_recommend with the rule mock runs end to end") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.partition.n_clients = 4;
    cfg.data.samples = 600;
    cfg.backend.kind = "mock";
    const CommandOutcome outcome = cmd_recommend(cfg, out);
    CHECK(fs::exists(outcome.run_dir / "advisor_transcript.json"));
    CHECK(fs::exists(outcome.run_dir / "metrics.csv"));
    CHECK(outcome.summary.at("attempts") == 1);
    CHECK(out.str().find("recommended: {'strategy_name': ") != std::string::npos);
}

TEST_CASE("cmd_recommend replay fixture drives the describe path") {
    TempDir tmp;
    const fs::path fixture = tmp.path / "responses.txt";
    {
        std::ofstream out(fixture);
        out << "not a config\n{'strategy_name': 'fed_median'}\n";
    }
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.backend.kind = "replay";
    cfg.backend.replay_file = fixture.string();
    cfg.describe = "one client looks poisoned";
    const CommandOutcome outcome = cmd_recommend(cfg, out);
    CHECK(outcome.summary.at("attempts") == 2);
    CHECK(outcome.summary.at("strategy") == "{'strategy_name': 'fed_median'}");
    CHECK(!fs::exists(outcome.run_dir / "report.json"));  // detection skipped
}

TEST_CASE("cmd_recommend surfaces exhausted retries") {
    TempDir tmp;
    const fs::path fixture = tmp.path / "responses.json";
    {
        std::ofstream out(fixture);
        out << R"(["nope", "still nope", "no dict here"])";
    }
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.backend.kind = "replay";
    cfg.backend.replay_file = fixture.string();
    CHECK_THROWS_AS(cmd_recommend(cfg, out), ExhaustedRetriesError);
}

TEST_CASE("cmd_search runs exactly eight trials and resumes") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    const CommandOutcome first = cmd_search(cfg, out);
    CHECK(first.summary.at("evaluations") == 8);
    CHECK(first.summary.at("fresh_evaluations") == 8);
    CHECK(count_dirs(first.run_dir, "trial_") == 8);
    CHECK(fs::exists(first.run_dir / "archive.txt"));

    // Truncate the archive to simulate a crash mid-generation, then resume.
    std::vector<std::string> lines;
    {
        std::ifstream in(first.run_dir / "archive.txt");
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    REQUIRE(lines.size() == 8);
    {
        std::ofstream outf(first.run_dir / "archive.txt", std::ios::trunc);
        for (std::size_t i = 0; i < 5; ++i) outf << lines[i] << "\n";
    }
    std::ostringstream resume_out;
    const CommandOutcome resumed = cmd_search(cfg, resume_out, first.run_dir.string());
    CHECK(resumed.summary.at("evaluations") == 8);
    CHECK(resumed.summary.at("fresh_evaluations") == 3);
    CHECK(resumed.summary.at("best_strategy") == first.summary.at("best_strategy"));
    CHECK(resumed.summary.at("best_fitness") == first.summary.at("best_fitness"));

    // The finalized archive equals the original, record for record.
    std::vector<std::string> resumed_lines;
    {
        std::ifstream in(first.run_dir / "archive.txt");
        std::string line;
        while (std::getline(in, line)) resumed_lines.push_back(line);
    }
    CHECK(resumed_lines == lines);
}

TEST_CASE("cmd_hpo_ref produces the envelope") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.rounds = 5;
    const CommandOutcome outcome = cmd_hpo_ref(cfg, out);
    CHECK(outcome.summary.at("trials") == 50);
    CHECK(count_dirs(outcome.run_dir, "trial_") == 50);
    CHECK(outcome.summary.at("best_fitness").get<double>() >=
          outcome.summary.at("worst_fitness").get<double>());
}

TEST_CASE("cmd_bench emits the comparison table in column order") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.bench_repetitions = 2;
    const CommandOutcome outcome = cmd_bench(cfg, out);
    CHECK(fs::exists(outcome.run_dir / "bench.csv"));
    CHECK(fs::exists(outcome.run_dir / "bench.txt"));
    const auto& rows = outcome.summary.at("rows");
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].at("approach") == "empirical_best");
    CHECK(rows[1].at("approach") == "genetic");
    CHECK(rows[2].at("approach") == "advisor");
    CHECK(rows[3].at("approach") == "fedavg");
    CHECK(rows[4].at("approach") == "empirical_worst");
    for (const auto& row : rows) CHECK(!row.at("std").is_null());

    // single repetition refuses to print a standard deviation
    cfg.bench_repetitions = 1;
    std::ostringstream out2;
    const CommandOutcome single = cmd_bench(cfg, out2);
    for (const auto& row : single.summary.at("rows")) CHECK(row.at("std").is_null());
    CHECK(out2.str().find("std omitted") != std::string::npos);
}

TEST_CASE("cmd_detect flags the corrupted-client scenario") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.partition.n_clients = 4;
    cfg.partition.scenario = Scenario::corrupted_client;
    cfg.data.samples = 1000;
    cfg.data.features = 40;
    cfg.data.separation = 1.0;
    cmd_detect(cfg, out);
    CHECK(out.str().find("Outlier Risk: Yes") != std::string::npos);
}

TEST_CASE("cmd_recommend maps unreachable backends to TransportError") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.backend.kind = "http";
    cfg.backend.base_url = "http://127.0.0.1:1";
    cfg.backend.timeout_s = 1;
    cfg.backend.backoff_ms = 1;
    CHECK_THROWS_AS(cmd_recommend(cfg, out), TransportError);
}

TEST_CASE("gen-data writes a loadable csv with its snapshot") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    cfg.data.samples = 40;
    const std::string csv = (tmp.path / "data.csv").string();
    cmd_gen_data(cfg, csv, out);
    CHECK(fs::exists(csv));
    CHECK(fs::exists(csv + ".config.json"));
    const Dataset ds = load_csv(csv, "label");
    CHECK(ds.n_samples() == 40);
    CHECK(ds.n_features == 6);
}

TEST_CASE("cmd_partition writes per-client csv files") {
    TempDir tmp;
    std::ostringstream out;
    ExperimentConfig cfg = small_config(tmp.str());
    const CommandOutcome outcome = cmd_partition(cfg, out);
    for (int c = 0; c < 3; ++c) {
        CHECK(fs::exists(outcome.run_dir / ("client_" + std::to_string(c) + ".csv")));
    }
    CHECK(outcome.summary.at("clients").size() == 3);
}

TEST_SUITE_END();
