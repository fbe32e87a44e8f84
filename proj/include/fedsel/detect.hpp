#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fedsel/dataset.hpp"
#include "fedsel/model.hpp"

namespace fedsel {

struct LabelDistribution {
    std::vector<double> probs;
};

/// Empirical label distribution over n_labels aligned classes (zero-filled
/// for classes the client never sees).
LabelDistribution label_distribution(const Dataset& data, int n_labels);

/// Jensen-Shannon divergence with base-2 logarithms, so the bound is exactly
/// [0, 1]. Zero-probability terms contribute zero.
double jsd(const LabelDistribution& p, const LabelDistribution& q);

/// Shannon entropy, base 2.
double shannon_entropy(const LabelDistribution& p);

struct LabelSkewResult {
    bool flag = false;
    double max_jsd = 0.0;
    std::vector<double> per_client;
};

/// Aligns label sets across clients, forms the unweighted mean distribution,
/// and flags when any client's divergence from it exceeds tau_label.
LabelSkewResult detect_label_skew(const std::vector<ClientPartition>& parts,
                                  double tau_label = 0.1);

/// Max minus min per-client label entropy. Diagnostic only: two differently
/// skewed clients can share an entropy value, so this never drives a flag.
double entropy_spread(const std::vector<ClientPartition>& parts);

/// Per-client sufficient statistics for the global covariance: counts, sums,
/// sums of squares, and packed upper-triangular cross-products (diagonal
/// included, so cross is consistent with sum_sq there).
struct MomentStats {
    long n = 0;
    std::vector<double> sum;
    std::vector<double> sum_sq;
    std::vector<double> cross;  // packed row-major upper triangle, d*(d+1)/2

    static std::size_t cross_index(std::size_t j, std::size_t k, std::size_t d);
};

MomentStats compute_moments(const Dataset& data);
MomentStats merge_moments(MomentStats a, const MomentStats& b);

/// Covariance of globally standardized features, assembled from aggregated
/// raw moments. Zero-variance features are floored at std 1e-12.
std::vector<double> standardized_covariance(const MomentStats& m);

/// Top-2 eigenvectors by power iteration with deflation: unit norm,
/// descending eigenvalue, sign fixed so the largest-magnitude entry is
/// positive. Also returns the eigenvalues.
struct Top2 {
    std::array<std::vector<double>, 2> components;
    std::array<double, 2> eigenvalues{0.0, 0.0};
};
Top2 top2_eigenvectors(const std::vector<double>& cov, std::size_t d, double tol = 1e-10,
                       int max_iter = 10000);

struct PcaModel {
    std::vector<double> mean;
    std::vector<double> stddev;
    std::array<std::vector<double>, 2> components;
    std::array<double, 2> eigenvalues{0.0, 0.0};
};

/// Round 1: clients emit moment statistics, the server assembles the
/// standardized covariance and extracts the top-2 components.
PcaModel fed_pca_round1(const std::vector<ClientPartition>& parts);

/// Round 2: each client standardizes by the global mean/std, projects onto
/// the shared components, and returns its mean projected point.
std::vector<std::array<double, 2>> fed_pca_round2(const std::vector<ClientPartition>& parts,
                                                  const PcaModel& model);

struct FeatureSkewResult {
    bool flag = false;
    double max_distance = 0.0;
    std::vector<double> distance_matrix;  // n x n row-major
    std::vector<std::array<double, 2>> centroids;
};

FeatureSkewResult detect_feature_skew(const std::vector<ClientPartition>& parts,
                                      double tau_feat = 1.0);

/// Div(i): mean over j != i of D(i, j), where D sums per-layer (unsquared)
/// L2 norms of the parameter differences.
std::vector<double> divergence_scores(const std::vector<ModelParams>& params_list);

/// Probe training runs hotter and noisier than the engine defaults (high
/// learning rate, batch of two): repetition-to-repetition variation then
/// dominates benign per-client quirks, while genuinely divergent clients
/// still stand out every time.
inline TrainSettings outlier_probe_train_settings() {
    TrainSettings settings;
    settings.local_epochs = 1;
    settings.learning_rate = 0.06;
    settings.batch_size = 2;
    settings.proximal_mu = 0.0;
    return settings;
}

struct OutlierSettings {
    int repetitions = 5;
    int rep_threshold = 4;
    double percentile = 90.0;
    TrainSettings train = outlier_probe_train_settings();
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct OutlierResult {
    bool flag = false;
    std::vector<int> flag_counts;
};

/// Each repetition runs two FedAvg probe rounds from a fresh seed, captures
/// the post-round-2 client parameters before aggregation, and flags clients
/// at or above the nearest-rank 90th percentile of divergence scores. A
/// client is an outlier when flagged in >= rep_threshold repetitions.
OutlierResult detect_outliers(const std::vector<ClientPartition>& parts,
                              const std::vector<int>& architecture,
                              const OutlierSettings& settings = {});

struct DetectThresholds {
    double tau_label = 0.1;
    double tau_feat = 1.0;
    int rep_threshold = 4;
};

/// The three binary flags plus the underlying metrics; the advisor's input.
struct HeterogeneityReport {
    bool label_skew = false;
    double max_jsd = 0.0;
    std::vector<double> per_client_jsd;
    bool feature_skew = false;
    double max_centroid_distance = 0.0;
    std::vector<double> centroid_distance_matrix;
    bool outlier_risk = false;
    std::vector<int> flag_counts;
    DetectThresholds thresholds;
};

HeterogeneityReport build_report(const std::vector<ClientPartition>& parts,
                                 const std::vector<int>& architecture, std::uint64_t seed,
                                 const DetectThresholds& thresholds = {}, int jobs = 1);

}  // namespace fedsel
