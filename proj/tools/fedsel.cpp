// fedsel: federated-learning strategy selection toolkit.
//
// Subcommands: gen-data | partition | detect | recommend | run | search |
// hpo-ref | bench. A JSON config file provides defaults; command-line flags
// override individual fields.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsel/experiment.hpp"

namespace {

using fedsel::ExperimentConfig;

struct CliState {
    std::string config_file;
    ExperimentConfig cfg;

    // raw flag storage; only applied when the user actually passed the flag
    std::string scenario;
    std::string proportions;
    std::string noise;
    std::string hidden;
    std::string out_path;    // gen-data
    std::string resume_dir;  // search
    bool mock = false;
    std::string mock_echo;
    std::string describe;
};

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
    std::vector<double> values;
    std::string token;
    std::istringstream in(text);
    while (std::getline(in, token, ',')) {
        try {
            values.push_back(std::stod(token));
        } catch (const std::exception&) {
            throw fedsel::ValidationError(flag + ": cannot parse '" + token + "' as a number");
        }
    }
    return values;
}

// Attach the shared configuration flags to a subcommand. Each flag writes
// straight into cfg; CLI11 only touches fields the user passed, so file
// values and defaults survive.
void add_common_flags(CLI::App* cmd, CliState& state) {
    cmd->add_option("--config", state.config_file, "JSON config file (flags override its fields)");
    cmd->add_option("--seed", state.cfg.seed, "master seed");
    cmd->add_option("--rounds", state.cfg.rounds, "FL rounds per run");
    cmd->add_option("--jobs", state.cfg.jobs, "worker threads for client training");
    cmd->add_option("--out-dir", state.cfg.out_dir, "directory for run outputs");

    cmd->add_option("--samples", state.cfg.data.samples, "synthetic sample count");
    cmd->add_option("--features", state.cfg.data.features, "synthetic feature count");
    cmd->add_option("--classes", state.cfg.data.classes, "synthetic class count");
    cmd->add_option("--separation", state.cfg.data.separation, "synthetic cluster separation");
    cmd->add_option("--csv", state.cfg.data.csv_path, "CSV dataset path (sets data.source=csv)");
    cmd->add_option("--label-column", state.cfg.data.label_column, "label column name or index");

    cmd->add_option("--scenario", state.scenario,
                    "iid|label_skew|feature_skew|noisy_label|label_poisoning|corrupted_client|"
                    "dirichlet");
    cmd->add_option("--clients", state.cfg.partition.n_clients, "number of simulated clients");
    cmd->add_option("--proportions", state.proportions,
                    "label_skew class-1 shares, comma separated");
    cmd->add_option("--client-size", state.cfg.partition.client_size,
                    "label_skew samples per client");
    cmd->add_option("--noise", state.noise,
                    "feature_skew noise per client as mean:std pairs, comma separated");
    cmd->add_option("--flip-fraction", state.cfg.partition.flip_fraction,
                    "noisy_label flip fraction");
    cmd->add_option("--alpha", state.cfg.partition.alpha, "dirichlet concentration");
    cmd->add_option("--target-client", state.cfg.partition.target_client,
                    "client targeted by flips/corruption (-1 = last)");

    cmd->add_option("--epochs", state.cfg.train.local_epochs, "local epochs per round");
    cmd->add_option("--lr", state.cfg.train.learning_rate, "local learning rate");
    cmd->add_option("--batch-size", state.cfg.train.batch_size, "local minibatch size");
    cmd->add_option("--mu", state.cfg.train.proximal_mu, "proximal term weight");
    cmd->add_option("--hidden", state.hidden, "hidden layer sizes, comma separated");

    cmd->add_option("--strategy", state.cfg.strategy_text,
                    "strategy literal, e.g. \"{'strategy_name': 'fed_avg'}\"");

    cmd->add_option("--backend", state.cfg.backend.kind, "mock|replay|http");
    cmd->add_option("--base-url", state.cfg.backend.base_url, "chat-completions base URL");
    cmd->add_option("--model", state.cfg.backend.model, "model name");
    cmd->add_option("--timeout", state.cfg.backend.timeout_s, "HTTP timeout seconds");
    cmd->add_flag("--mock", state.mock, "use the deterministic rule-based mock backend");
    cmd->add_option("--mock-echo", state.mock_echo, "replay responses from this fixture file");
    cmd->add_option("--describe", state.describe,
                    "free-text heterogeneity description (human-in-the-loop)");

    cmd->add_option("--repetitions", state.cfg.bench_repetitions, "bench repetitions");
}

// Re-parse layered settings: config file first, then flag overrides.
void apply_config_file_then_flags(CLI::App* cmd, CliState& state) {
    if (!state.config_file.empty()) {
        ExperimentConfig from_file = fedsel::load_config_file(state.config_file);
        // Flags the user passed must win; re-apply them over the file values.
        ExperimentConfig flag_values = state.cfg;
        state.cfg = from_file;
        const auto passed = [cmd](const std::string& name) {
            const CLI::Option* opt = cmd->get_option_no_throw(name);
            return opt != nullptr && opt->count() > 0;
        };
        if (passed("--seed")) state.cfg.seed = flag_values.seed;
        if (passed("--rounds")) state.cfg.rounds = flag_values.rounds;
        if (passed("--jobs")) state.cfg.jobs = flag_values.jobs;
        if (passed("--out-dir")) state.cfg.out_dir = flag_values.out_dir;
        if (passed("--samples")) state.cfg.data.samples = flag_values.data.samples;
        if (passed("--features")) state.cfg.data.features = flag_values.data.features;
        if (passed("--classes")) state.cfg.data.classes = flag_values.data.classes;
        if (passed("--separation")) state.cfg.data.separation = flag_values.data.separation;
        if (passed("--csv")) state.cfg.data.csv_path = flag_values.data.csv_path;
        if (passed("--label-column")) state.cfg.data.label_column = flag_values.data.label_column;
        if (passed("--clients")) state.cfg.partition.n_clients = flag_values.partition.n_clients;
        if (passed("--client-size")) {
            state.cfg.partition.client_size = flag_values.partition.client_size;
        }
        if (passed("--flip-fraction")) {
            state.cfg.partition.flip_fraction = flag_values.partition.flip_fraction;
        }
        if (passed("--alpha")) state.cfg.partition.alpha = flag_values.partition.alpha;
        if (passed("--target-client")) {
            state.cfg.partition.target_client = flag_values.partition.target_client;
        }
        if (passed("--epochs")) state.cfg.train.local_epochs = flag_values.train.local_epochs;
        if (passed("--lr")) state.cfg.train.learning_rate = flag_values.train.learning_rate;
        if (passed("--batch-size")) state.cfg.train.batch_size = flag_values.train.batch_size;
        if (passed("--mu")) state.cfg.train.proximal_mu = flag_values.train.proximal_mu;
        if (passed("--strategy")) state.cfg.strategy_text = flag_values.strategy_text;
        if (passed("--backend")) state.cfg.backend.kind = flag_values.backend.kind;
        if (passed("--base-url")) state.cfg.backend.base_url = flag_values.backend.base_url;
        if (passed("--model")) state.cfg.backend.model = flag_values.backend.model;
        if (passed("--timeout")) state.cfg.backend.timeout_s = flag_values.backend.timeout_s;
        if (passed("--repetitions")) state.cfg.bench_repetitions = flag_values.bench_repetitions;
    }

    if (!state.scenario.empty()) {
        const auto s = fedsel::scenario_from_string(state.scenario);
        if (!s) throw fedsel::ValidationError("--scenario: unknown scenario '" + state.scenario + "'");
        state.cfg.partition.scenario = *s;
    }
    if (!state.proportions.empty()) {
        state.cfg.partition.proportions = parse_double_list(state.proportions, "--proportions");
    }
    if (!state.noise.empty()) {
        state.cfg.partition.noise.clear();
        std::istringstream in(state.noise);
        std::string pair;
        while (std::getline(in, pair, ',')) {
            const std::size_t colon = pair.find(':');
            if (colon == std::string::npos) {
                throw fedsel::ValidationError("--noise: expected mean:std pairs");
            }
            try {
                state.cfg.partition.noise.push_back(
                    {std::stod(pair.substr(0, colon)), std::stod(pair.substr(colon + 1))});
            } catch (const std::exception&) {
                throw fedsel::ValidationError("--noise: cannot parse '" + pair + "'");
            }
        }
    }
    if (!state.hidden.empty()) {
        state.cfg.hidden.clear();
        for (double v : parse_double_list(state.hidden, "--hidden")) {
            state.cfg.hidden.push_back(static_cast<int>(v));
        }
    }
    if (!state.cfg.data.csv_path.empty()) state.cfg.data.source = "csv";
    if (state.mock) state.cfg.backend.kind = "mock";
    if (!state.mock_echo.empty()) {
        state.cfg.backend.kind = "replay";
        state.cfg.backend.replay_file = state.mock_echo;
    }
    if (!state.describe.empty()) state.cfg.describe = state.describe;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedsel: automated aggregation-strategy selection for simulated FL"};
    app.require_subcommand(1);

    CliState state;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic CSV dataset");
    CLI::App* part = app.add_subcommand("partition", "write per-client partitions as CSV");
    CLI::App* detect = app.add_subcommand("detect", "run the heterogeneity diagnostics");
    CLI::App* recommend =
        app.add_subcommand("recommend", "advisor recommendation followed by one FL run");
    CLI::App* run = app.add_subcommand("run", "one FL run with an explicit strategy");
    CLI::App* search = app.add_subcommand("search", "8-trial genetic strategy search");
    CLI::App* hpo = app.add_subcommand("hpo-ref", "50-trial random-search reference envelope");
    CLI::App* bench = app.add_subcommand("bench", "compare approaches over repeated runs");

    for (CLI::App* cmd : {gen, part, detect, recommend, run, search, hpo, bench}) {
        add_common_flags(cmd, state);
    }
    gen->add_option("--out", state.out_path, "output CSV path")->required();
    search->add_option("--resume", state.resume_dir, "existing search directory to resume");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? fedsel::kExitOk : fedsel::kExitUsage;
    }

    CLI::App* active = app.get_subcommands().front();
    try {
        apply_config_file_then_flags(active, state);
        if (active == gen) {
            fedsel::cmd_gen_data(state.cfg, state.out_path, std::cout);
        } else if (active == part) {
            fedsel::cmd_partition(state.cfg, std::cout);
        } else if (active == detect) {
            fedsel::cmd_detect(state.cfg, std::cout);
        } else if (active == recommend) {
            fedsel::cmd_recommend(state.cfg, std::cout);
        } else if (active == run) {
            fedsel::cmd_run(state.cfg, std::cout);
        } else if (active == search) {
            fedsel::cmd_search(state.cfg, std::cout, state.resume_dir);
        } else if (active == hpo) {
            fedsel::cmd_hpo_ref(state.cfg, std::cout);
        } else if (active == bench) {
            fedsel::cmd_bench(state.cfg, std::cout);
        }
        return fedsel::kExitOk;
    } catch (const fedsel::TransportError& e) {
        std::cerr << "transport error: " << e.what() << "\n";
        return fedsel::kExitTransport;
    } catch (const fedsel::ExhaustedRetriesError& e) {
        std::cerr << "error: " << e.what() << "\n";
        for (std::size_t i = 0; i < e.raw_responses.size(); ++i) {
            std::cerr << "response " << (i + 1) << ": " << e.raw_responses[i] << "\n";
        }
        return fedsel::kExitExhaustedRetries;
    } catch (const fedsel::ValidationError& e) {
        std::cerr << "invalid configuration: " << e.what() << "\n";
        return fedsel::kExitValidation;
    } catch (const fedsel::ConfigError& e) {
        std::cerr << "invalid strategy config (" << to_string(e.kind()) << "): " << e.what()
                  << "\n";
        return fedsel::kExitValidation;
    } catch (const fedsel::DatasetError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return fedsel::kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return fedsel::kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return fedsel::kExitInternal;
    }
}
