#include "fedsel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "fedsel/rng.hpp"

namespace fedsel {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (std::isspace(static_cast<unsigned char>(s[b])) != 0)) ++b;
    while (e > b && (std::isspace(static_cast<unsigned char>(s[e - 1])) != 0)) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.n_classes()));
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    }
    return by_class;
}

void require_binary(const Dataset& ds, const char* op) {
    for (int y : ds.labels) {
        if (y != 0 && y != 1) {
            throw DatasetError(std::string(op) + ": requires binary labels (0/1), found label " +
                               std::to_string(y));
        }
    }
}

}  // namespace

int Dataset::n_classes() const {
    int k = 0;
    for (int y : labels) k = std::max(k, y + 1);
    return k;
}

void Dataset::check() const {
    if (n_features == 0 && !features.empty()) throw DatasetError("dataset: n_features is zero");
    if (features.size() != labels.size() * n_features) {
        throw DatasetError("dataset: feature row count does not match label count");
    }
    if (n_classes() < 2) throw DatasetError("dataset: needs at least 2 classes");
    for (int y : labels) {
        if (y < 0) throw DatasetError("dataset: negative label");
    }
    for (double v : features) {
        if (!std::isfinite(v)) throw DatasetError("dataset: non-finite feature value");
    }
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
    Dataset out;
    out.n_features = ds.n_features;
    out.features.reserve(indices.size() * ds.n_features);
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
        const double* r = ds.row(i);
        out.features.insert(out.features.end(), r, r + ds.n_features);
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

const char* to_string(Scenario s) {
    switch (s) {
        case Scenario::iid: return "iid";
        case Scenario::label_skew: return "label_skew";
        case Scenario::feature_skew: return "feature_skew";
        case Scenario::noisy_label: return "noisy_label";
        case Scenario::label_poisoning: return "label_poisoning";
        case Scenario::corrupted_client: return "corrupted_client";
        case Scenario::dirichlet: return "dirichlet";
    }
    return "?";
}

std::optional<Scenario> scenario_from_string(const std::string& name) {
    for (Scenario s : {Scenario::iid, Scenario::label_skew, Scenario::feature_skew,
                       Scenario::noisy_label, Scenario::label_poisoning,
                       Scenario::corrupted_client, Scenario::dirichlet}) {
        if (name == to_string(s)) return s;
    }
    return std::nullopt;
}

Dataset generate_synthetic(int n_samples, int n_features, int n_classes, std::uint64_t seed,
                           double separation) {
    if (n_classes < 2) throw std::invalid_argument("generate_synthetic: n_classes must be >= 2");
    if (n_features < 1) throw std::invalid_argument("generate_synthetic: n_features must be >= 1");
    if (n_samples < n_classes) {
        throw std::invalid_argument("generate_synthetic: n_samples must be >= n_classes");
    }

    // Balanced label sequence: the first (n mod K) classes get one extra.
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(n_samples));
    const int base = n_samples / n_classes;
    const int extra = n_samples % n_classes;
    for (int k = 0; k < n_classes; ++k) {
        const int count = base + (k < extra ? 1 : 0);
        labels.insert(labels.end(), static_cast<std::size_t>(count), k);
    }

    Rng rng(derive_seed(seed, "generate_synthetic"));
    rng.shuffle(labels);

    // Class signal lives in the first min(d, 2K) features (feature j belongs
    // to class j mod K); the rest carry no label information, like sensor
    // data where most channels are uninformative. Channel noise uses a
    // sensor-amplitude scale of 2 so scenario corruptions expressed in raw
    // units stay moderate relative to the data.
    constexpr double kChannelNoise = 2.0;
    Dataset ds;
    ds.n_features = static_cast<std::size_t>(n_features);
    ds.labels = labels;
    ds.features.resize(static_cast<std::size_t>(n_samples) * ds.n_features);
    const int informative = std::min(n_features, 2 * n_classes);
    for (int i = 0; i < n_samples; ++i) {
        const int k = labels[static_cast<std::size_t>(i)];
        double* r = ds.row(static_cast<std::size_t>(i));
        for (int j = 0; j < n_features; ++j) {
            const double mu = (j < informative && j % n_classes == k) ? separation : 0.0;
            r[j] = rng.normal(mu, kChannelNoise);
        }
    }
    return ds;
}

Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw DatasetError("load_csv: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw DatasetError("load_csv: '" + path + "' is empty");
    std::vector<std::string> header = split_csv_line(line);
    for (std::string& h : header) h = trim(h);

    int label_idx = -1;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == label_column) {
            label_idx = static_cast<int>(j);
            break;
        }
    }
    if (label_idx < 0) {
        try {
            std::size_t pos = 0;
            const int idx = std::stoi(label_column, &pos);
            if (pos == label_column.size() && idx >= 0 &&
                idx < static_cast<int>(header.size())) {
                label_idx = idx;
            }
        } catch (const std::exception&) {
        }
    }
    if (label_idx < 0) {
        throw DatasetError("load_csv: unknown label column '" + label_column + "'");
    }

    Dataset ds;
    ds.n_features = header.size() - 1;
    std::unordered_map<std::string, int> label_codes;  // first-seen encoding

    std::size_t row_no = 1;  // header was row 1
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DatasetError("load_csv: row " + std::to_string(row_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const std::string cell = trim(cells[j]);
            if (static_cast<int>(j) == label_idx) {
                if (cell.empty()) {
                    throw DatasetError("load_csv: missing label at row " + std::to_string(row_no) +
                                       ", column " + std::to_string(j + 1) + " ('" + header[j] +
                                       "')");
                }
                auto it = label_codes.find(cell);
                if (it == label_codes.end()) {
                    it = label_codes.emplace(cell, static_cast<int>(label_codes.size())).first;
                }
                ds.labels.push_back(it->second);
                continue;
            }
            if (cell.empty()) {
                throw DatasetError("load_csv: missing value at row " + std::to_string(row_no) +
                                   ", column " + std::to_string(j + 1) + " ('" + header[j] + "')");
            }
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end != cell.c_str() + cell.size()) {
                throw DatasetError("load_csv: non-numeric value '" + cell + "' at row " +
                                   std::to_string(row_no) + ", column " + std::to_string(j + 1) +
                                   " ('" + header[j] + "')");
            }
            if (!std::isfinite(v)) {
                throw DatasetError("load_csv: non-finite value at row " + std::to_string(row_no) +
                                   ", column " + std::to_string(j + 1) + " ('" + header[j] + "')");
            }
            ds.features.push_back(v);
        }
    }
    ds.check();
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DatasetError("save_csv: cannot open '" + path + "' for writing");
    for (std::size_t j = 0; j < ds.n_features; ++j) out << "f" << j << ",";
    out << "label\n";
    char buf[40];
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        const double* r = ds.row(i);
        for (std::size_t j = 0; j < ds.n_features; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", r[j]);
            out << buf << ",";
        }
        out << ds.labels[i] << "\n";
    }
    if (!out) throw DatasetError("save_csv: write to '" + path + "' failed");
}

std::vector<ClientPartition> partition_iid(const Dataset& ds, int n_clients, std::uint64_t seed) {
    if (n_clients < 1) throw std::invalid_argument("partition_iid: n_clients must be >= 1");
    if (ds.n_samples() < static_cast<std::size_t>(n_clients)) {
        throw DatasetError("partition_iid: fewer samples than clients");
    }

    Rng rng(derive_seed(seed, "partition_iid"));
    std::vector<std::vector<std::size_t>> by_class = indices_by_class(ds);
    std::vector<std::vector<std::size_t>> assigned(static_cast<std::size_t>(n_clients));

    // Stratified deal: round-robin within each class, with the cursor carried
    // across classes so every client is served when samples >= clients.
    int cursor = 0;
    for (auto& pool : by_class) {
        rng.shuffle(pool);
        for (std::size_t idx : pool) {
            assigned[static_cast<std::size_t>(cursor)].push_back(idx);
            cursor = (cursor + 1) % n_clients;
        }
    }

    std::vector<ClientPartition> parts;
    parts.reserve(static_cast<std::size_t>(n_clients));
    for (int c = 0; c < n_clients; ++c) {
        auto& idx = assigned[static_cast<std::size_t>(c)];
        rng.shuffle(idx);
        parts.push_back({c, subset(ds, idx)});
    }
    return parts;
}

std::vector<ClientPartition> partition_label_skew(const Dataset& ds,
                                                  const std::vector<double>& proportions,
                                                  int client_size, std::uint64_t seed) {
    require_binary(ds, "partition_label_skew");
    if (proportions.empty()) {
        throw std::invalid_argument("partition_label_skew: proportions must be non-empty");
    }
    for (double p : proportions) {
        if (!(p > 0.0 && p < 1.0)) {
            throw std::invalid_argument("partition_label_skew: proportions must lie in (0, 1)");
        }
    }
    if (client_size < 1) {
        throw std::invalid_argument("partition_label_skew: client_size must be positive");
    }

    Rng rng(derive_seed(seed, "partition_label_skew"));
    std::vector<std::vector<std::size_t>> pools = indices_by_class(ds);
    if (pools.size() < 2) pools.resize(2);
    rng.shuffle(pools[0]);
    rng.shuffle(pools[1]);
    std::size_t used0 = 0, used1 = 0;

    std::vector<ClientPartition> parts;
    for (std::size_t c = 0; c < proportions.size(); ++c) {
        const auto want1 = static_cast<std::size_t>(std::lround(proportions[c] * client_size));
        const std::size_t want0 = static_cast<std::size_t>(client_size) - want1;
        if (pools[1].size() - used1 < want1) {
            throw DatasetError("partition_label_skew: class 1 pool exhausted for client " +
                               std::to_string(c) + " (needs " + std::to_string(want1) + ", " +
                               std::to_string(pools[1].size() - used1) + " left)");
        }
        if (pools[0].size() - used0 < want0) {
            throw DatasetError("partition_label_skew: class 0 pool exhausted for client " +
                               std::to_string(c) + " (needs " + std::to_string(want0) + ", " +
                               std::to_string(pools[0].size() - used0) + " left)");
        }
        std::vector<std::size_t> idx;
        idx.reserve(static_cast<std::size_t>(client_size));
        idx.insert(idx.end(), pools[1].begin() + static_cast<std::ptrdiff_t>(used1),
                   pools[1].begin() + static_cast<std::ptrdiff_t>(used1 + want1));
        idx.insert(idx.end(), pools[0].begin() + static_cast<std::ptrdiff_t>(used0),
                   pools[0].begin() + static_cast<std::ptrdiff_t>(used0 + want0));
        used1 += want1;
        used0 += want0;
        rng.shuffle(idx);
        parts.push_back({static_cast<int>(c), subset(ds, idx)});
    }
    return parts;
}

std::vector<ClientPartition> partition_dirichlet(const Dataset& ds, int n_clients, double alpha,
                                                 std::uint64_t seed) {
    if (ds.n_samples() == 0) throw DatasetError("partition_dirichlet: empty dataset");
    if (n_clients < 1) throw std::invalid_argument("partition_dirichlet: n_clients must be >= 1");
    if (!(alpha > 0.0)) throw std::invalid_argument("partition_dirichlet: alpha must be positive");

    const std::vector<std::vector<std::size_t>> by_class = indices_by_class(ds);
    constexpr int kMaxAttempts = 100;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Rng rng(derive_seed(seed, "partition_dirichlet", static_cast<std::uint64_t>(attempt)));
        std::vector<std::vector<std::size_t>> assigned(static_cast<std::size_t>(n_clients));
        for (auto pool : by_class) {
            rng.shuffle(pool);
            const std::vector<double> w = rng.dirichlet(alpha, static_cast<std::size_t>(n_clients));
            // Cumulative weights; each sample draws its client multinomially.
            std::vector<double> cum(w.size());
            double acc = 0.0;
            for (std::size_t c = 0; c < w.size(); ++c) {
                acc += w[c];
                cum[c] = acc;
            }
            cum.back() = 1.0;
            for (std::size_t idx : pool) {
                const double u = rng.uniform();
                const std::size_t c = static_cast<std::size_t>(
                    std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
                assigned[std::min(c, cum.size() - 1)].push_back(idx);
            }
        }
        const bool all_nonempty =
            std::all_of(assigned.begin(), assigned.end(),
                        [](const std::vector<std::size_t>& a) { return !a.empty(); });
        if (!all_nonempty) continue;
        std::vector<ClientPartition> parts;
        parts.reserve(static_cast<std::size_t>(n_clients));
        for (int c = 0; c < n_clients; ++c) {
            auto& idx = assigned[static_cast<std::size_t>(c)];
            rng.shuffle(idx);
            parts.push_back({c, subset(ds, idx)});
        }
        return parts;
    }
    throw DatasetError("partition_dirichlet: failed to produce non-empty clients after " +
                       std::to_string(kMaxAttempts) + " attempts (alpha=" + std::to_string(alpha) +
                       ", n_clients=" + std::to_string(n_clients) + ")");
}

std::vector<ClientPartition> apply_feature_noise(std::vector<ClientPartition> parts,
                                                 const std::vector<NoiseSpec>& noise,
                                                 std::uint64_t seed) {
    if (noise.size() != parts.size()) {
        throw std::invalid_argument("apply_feature_noise: need one (mean, std) pair per client, got " +
                                    std::to_string(noise.size()) + " for " +
                                    std::to_string(parts.size()) + " clients");
    }
    for (const NoiseSpec& n : noise) {
        if (n.stddev < 0.0) throw std::invalid_argument("apply_feature_noise: std must be >= 0");
    }
    for (std::size_t c = 0; c < parts.size(); ++c) {
        const NoiseSpec& n = noise[c];
        if (n.mean == 0.0 && n.stddev == 0.0) continue;
        Rng rng(derive_seed(seed, "feature_noise", static_cast<std::uint64_t>(parts[c].client_id)));
        for (double& v : parts[c].data.features) v += rng.normal(n.mean, n.stddev);
    }
    return parts;
}

std::vector<ClientPartition> flip_labels(std::vector<ClientPartition> parts, int client_id,
                                         double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("flip_labels: fraction must lie in [0, 1]");
    }
    ClientPartition* target = nullptr;
    for (ClientPartition& p : parts) {
        if (p.client_id == client_id) target = &p;
    }
    if (target == nullptr) {
        throw std::invalid_argument("flip_labels: no client with id " + std::to_string(client_id));
    }
    require_binary(target->data, "flip_labels");

    const std::size_t n = target->data.n_samples();
    const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "flip_labels", static_cast<std::uint64_t>(client_id)));
    rng.shuffle(order);
    for (std::size_t i = 0; i < k; ++i) {
        int& y = target->data.labels[order[i]];
        y = 1 - y;
    }
    return parts;
}

std::vector<ClientPartition> corrupt_client(std::vector<ClientPartition> parts, int client_id,
                                            std::uint64_t seed) {
    std::vector<NoiseSpec> noise(parts.size());
    bool found = false;
    for (std::size_t c = 0; c < parts.size(); ++c) {
        if (parts[c].client_id == client_id) {
            noise[c] = {1.0, 0.5};
            found = true;
        }
    }
    if (!found) {
        throw std::invalid_argument("corrupt_client: no client with id " +
                                    std::to_string(client_id));
    }
    parts = apply_feature_noise(std::move(parts), noise, derive_seed(seed, "corrupt_noise"));
    return flip_labels(std::move(parts), client_id, 1.0, derive_seed(seed, "corrupt_flip"));
}

std::vector<ClientPartition> make_partitions(const Dataset& ds, const PartitionSpec& spec) {
    if (spec.n_clients < 1) throw std::invalid_argument("make_partitions: n_clients must be >= 1");
    const int target =
        spec.target_client < 0 ? spec.n_clients - 1 : spec.target_client;

    switch (spec.scenario) {
        case Scenario::iid:
            return partition_iid(ds, spec.n_clients, spec.seed);
        case Scenario::label_skew: {
            if (static_cast<int>(spec.proportions.size()) != spec.n_clients) {
                throw std::invalid_argument(
                    "make_partitions: label_skew needs one proportion per client");
            }
            if (spec.client_size < 1) {
                throw std::invalid_argument("make_partitions: label_skew needs client_size > 0");
            }
            return partition_label_skew(ds, spec.proportions, spec.client_size, spec.seed);
        }
        case Scenario::feature_skew: {
            std::vector<NoiseSpec> noise = spec.noise;
            if (noise.empty() && spec.n_clients == 4) {
                noise = {{0.0, 0.1}, {0.0, 0.5}, {1.0, 0.1}, {-0.1, 0.1}};
            }
            if (static_cast<int>(noise.size()) != spec.n_clients) {
                throw std::invalid_argument(
                    "make_partitions: feature_skew needs one (mean, std) pair per client");
            }
            auto parts = partition_iid(ds, spec.n_clients, spec.seed);
            return apply_feature_noise(std::move(parts), noise, derive_seed(spec.seed, "noise"));
        }
        case Scenario::noisy_label: {
            auto parts = partition_iid(ds, spec.n_clients, spec.seed);
            return flip_labels(std::move(parts), target, spec.flip_fraction,
                               derive_seed(spec.seed, "flip"));
        }
        case Scenario::label_poisoning: {
            auto parts = partition_iid(ds, spec.n_clients, spec.seed);
            return flip_labels(std::move(parts), target, 1.0, derive_seed(spec.seed, "flip"));
        }
        case Scenario::corrupted_client: {
            auto parts = partition_iid(ds, spec.n_clients, spec.seed);
            return corrupt_client(std::move(parts), target, derive_seed(spec.seed, "corrupt"));
        }
        case Scenario::dirichlet:
            return partition_dirichlet(ds, spec.n_clients, spec.alpha, spec.seed);
    }
    throw std::invalid_argument("make_partitions: unknown scenario");
}

}  // namespace fedsel
