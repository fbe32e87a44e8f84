#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedsel {

/// Raised for malformed input data (CSV parse failures, exhausted sample
/// pools, impossible partition requests). Messages carry row/column or
/// client/class context.
class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tabular classification data. Features are row-major, labels are class ids
/// in [0, n_classes).
struct Dataset {
    std::vector<double> features;  // n_samples x n_features, row-major
    std::vector<int> labels;
    std::size_t n_features = 0;

    std::size_t n_samples() const { return labels.size(); }
    int n_classes() const;

    const double* row(std::size_t i) const { return features.data() + i * n_features; }
    double* row(std::size_t i) { return features.data() + i * n_features; }

    /// Throws DatasetError if any invariant is violated (size mismatch,
    /// fewer than two classes, out-of-range labels, non-finite features).
    void check() const;
};

/// Dataset restricted to the given sample indices, in the given order.
Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices);

struct ClientPartition {
    int client_id = 0;
    Dataset data;
};

enum class Scenario {
    iid,
    label_skew,
    feature_skew,
    noisy_label,
    label_poisoning,
    corrupted_client,
    dirichlet,
};

const char* to_string(Scenario s);
std::optional<Scenario> scenario_from_string(const std::string& name);

struct NoiseSpec {
    double mean = 0.0;
    double stddev = 0.0;
};

/// How to split a dataset across simulated clients. Scenario-specific fields
/// are ignored by the other scenarios.
struct PartitionSpec {
    Scenario scenario = Scenario::iid;
    int n_clients = 4;
    std::uint64_t seed = 0;
    std::vector<double> proportions;  // label_skew: class-1 share per client
    int client_size = 0;              // label_skew: samples per client
    std::vector<NoiseSpec> noise;     // feature_skew: one (mean, std) per client
    double flip_fraction = 0.3;       // noisy_label
    double alpha = 0.5;               // dirichlet
    int target_client = -1;           // noisy_label/label_poisoning/corrupted_client; -1 = last
};

inline constexpr double kDefaultClassSeparation = 3.0;

/// Class-conditional Gaussian clusters with separated means; labels balanced
/// to within one sample per class; deterministic given the seed.
Dataset generate_synthetic(int n_samples, int n_features, int n_classes, std::uint64_t seed,
                           double separation = kDefaultClassSeparation);

/// Reads a comma-delimited table with a header row. `label_column` is a
/// header name, or a 0-based column index if no header matches. Labels are
/// re-encoded to 0..K-1 in first-seen order.
Dataset load_csv(const std::string& path, const std::string& label_column);

void save_csv(const Dataset& ds, const std::string& path);

std::vector<ClientPartition> partition_iid(const Dataset& ds, int n_clients, std::uint64_t seed);

/// Binary datasets only: client i holds round(proportions[i] * client_size)
/// class-1 samples and the remainder class-0, drawn without replacement.
std::vector<ClientPartition> partition_label_skew(const Dataset& ds,
                                                  const std::vector<double>& proportions,
                                                  int client_size, std::uint64_t seed);

std::vector<ClientPartition> partition_dirichlet(const Dataset& ds, int n_clients, double alpha,
                                                 std::uint64_t seed);

/// Adds elementwise Gaussian noise N(mean, std^2) per client. (0, 0) leaves a
/// client's features bit-identical.
std::vector<ClientPartition> apply_feature_noise(std::vector<ClientPartition> parts,
                                                 const std::vector<NoiseSpec>& noise,
                                                 std::uint64_t seed);

/// Flips exactly round(fraction * n) uniformly chosen labels on one client;
/// requires binary labels there.
std::vector<ClientPartition> flip_labels(std::vector<ClientPartition> parts, int client_id,
                                         double fraction, std::uint64_t seed);

/// Feature noise (mean 1, std 0.5) plus a full label flip on one client.
std::vector<ClientPartition> corrupt_client(std::vector<ClientPartition> parts, int client_id,
                                            std::uint64_t seed);

/// Dispatches on spec.scenario and derives per-step sub-seeds from spec.seed.
std::vector<ClientPartition> make_partitions(const Dataset& ds, const PartitionSpec& spec);

}  // namespace fedsel
