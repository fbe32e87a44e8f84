#include "fedsel/detect.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "fedsel/rng.hpp"
#include "fedsel/strategies.hpp"

namespace fedsel {

namespace {

constexpr double kLog2 = 0.69314718055994530941723212145818;

int aligned_label_count(const std::vector<ClientPartition>& parts) {
    int k = 0;
    for (const ClientPartition& p : parts) k = std::max(k, p.data.n_classes());
    return k;
}

double kl_base2(const std::vector<double>& p, const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / m[i]);
    }
    return s / kLog2;
}

}  // namespace

LabelDistribution label_distribution(const Dataset& data, int n_labels) {
    if (data.n_samples() == 0) throw std::invalid_argument("label_distribution: empty dataset");
    LabelDistribution dist;
    dist.probs.assign(static_cast<std::size_t>(n_labels), 0.0);
    for (int y : data.labels) {
        if (y >= n_labels) throw std::invalid_argument("label_distribution: label out of range");
        dist.probs[static_cast<std::size_t>(y)] += 1.0;
    }
    for (double& v : dist.probs) v /= static_cast<double>(data.n_samples());
    return dist;
}

double jsd(const LabelDistribution& p, const LabelDistribution& q) {
    if (p.probs.size() != q.probs.size()) {
        throw std::invalid_argument("jsd: distributions must have equal length");
    }
    std::vector<double> m(p.probs.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (p.probs[i] + q.probs[i]);
    return 0.5 * kl_base2(p.probs, m) + 0.5 * kl_base2(q.probs, m);
}

double shannon_entropy(const LabelDistribution& p) {
    double h = 0.0;
    for (double v : p.probs) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h / kLog2;
}

LabelSkewResult detect_label_skew(const std::vector<ClientPartition>& parts, double tau_label) {
    if (parts.size() < 2) throw std::invalid_argument("detect_label_skew: need >= 2 clients");
    const int k = aligned_label_count(parts);

    std::vector<LabelDistribution> dists;
    dists.reserve(parts.size());
    for (const ClientPartition& p : parts) {
        if (p.data.n_samples() == 0) {
            throw std::invalid_argument("detect_label_skew: empty partition for client " +
                                        std::to_string(p.client_id));
        }
        dists.push_back(label_distribution(p.data, k));
    }

    LabelDistribution global;
    global.probs.assign(static_cast<std::size_t>(k), 0.0);
    for (const LabelDistribution& d : dists) {
        for (std::size_t i = 0; i < global.probs.size(); ++i) global.probs[i] += d.probs[i];
    }
    for (double& v : global.probs) v /= static_cast<double>(parts.size());

    LabelSkewResult result;
    result.per_client.reserve(parts.size());
    for (const LabelDistribution& d : dists) {
        const double v = jsd(d, global);
        result.per_client.push_back(v);
        result.max_jsd = std::max(result.max_jsd, v);
    }
    result.flag = result.max_jsd > tau_label;
    return result;
}

double entropy_spread(const std::vector<ClientPartition>& parts) {
    if (parts.size() < 2) throw std::invalid_argument("entropy_spread: need >= 2 clients");
    const int k = aligned_label_count(parts);
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const ClientPartition& p : parts) {
        const double h = shannon_entropy(label_distribution(p.data, k));
        if (first) {
            lo = hi = h;
            first = false;
        } else {
            lo = std::min(lo, h);
            hi = std::max(hi, h);
        }
    }
    return hi - lo;
}

std::size_t MomentStats::cross_index(std::size_t j, std::size_t k, std::size_t d) {
    if (j > k) std::swap(j, k);
    return j * d - j * (j + 1) / 2 + k;
}

MomentStats compute_moments(const Dataset& data) {
    const std::size_t d = data.n_features;
    MomentStats m;
    m.n = static_cast<long>(data.n_samples());
    m.sum.assign(d, 0.0);
    m.sum_sq.assign(d, 0.0);
    m.cross.assign(d * (d + 1) / 2, 0.0);
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        const double* x = data.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            m.sum[j] += x[j];
            m.sum_sq[j] += x[j] * x[j];
        }
        std::size_t c = 0;
        for (std::size_t j = 0; j < d; ++j) {
            for (std::size_t k = j; k < d; ++k) m.cross[c++] += x[j] * x[k];
        }
    }
    return m;
}

MomentStats merge_moments(MomentStats a, const MomentStats& b) {
    if (a.sum.size() != b.sum.size()) {
        throw std::invalid_argument("merge_moments: dimension mismatch");
    }
    a.n += b.n;
    for (std::size_t i = 0; i < a.sum.size(); ++i) {
        a.sum[i] += b.sum[i];
        a.sum_sq[i] += b.sum_sq[i];
    }
    for (std::size_t i = 0; i < a.cross.size(); ++i) a.cross[i] += b.cross[i];
    return a;
}

std::vector<double> standardized_covariance(const MomentStats& m) {
    const std::size_t d = m.sum.size();
    if (m.n < 1) throw std::invalid_argument("standardized_covariance: no samples");
    const double n = static_cast<double>(m.n);

    std::vector<double> mean(d), stddev(d);
    for (std::size_t j = 0; j < d; ++j) {
        mean[j] = m.sum[j] / n;
        const double var = std::max(m.sum_sq[j] / n - mean[j] * mean[j], 0.0);
        stddev[j] = std::max(std::sqrt(var), 1e-12);
    }

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t k = j; k < d; ++k) {
            const double exy = m.cross[MomentStats::cross_index(j, k, d)] / n;
            const double c = (exy - mean[j] * mean[k]) / (stddev[j] * stddev[k]);
            cov[j * d + k] = c;
            cov[k * d + j] = c;
        }
    }
    return cov;
}

Top2 top2_eigenvectors(const std::vector<double>& cov, std::size_t d, double tol, int max_iter) {
    if (cov.size() != d * d) throw std::invalid_argument("top2_eigenvectors: bad matrix size");
    if (d < 2) throw std::invalid_argument("top2_eigenvectors: need d >= 2");

    std::vector<double> work = cov;  // deflated in place
    Top2 out;

    for (int comp = 0; comp < 2; ++comp) {
        // Deterministic start, orthogonalized against previous components;
        // falls back to basis vectors when the default start degenerates.
        std::vector<double> v(d);
        bool started = false;
        for (std::size_t attempt = 0; attempt <= d && !started; ++attempt) {
            if (attempt == 0) {
                for (std::size_t j = 0; j < d; ++j) {
                    v[j] = 1.0 + 0.01 * static_cast<double>(j + 1);
                }
            } else {
                std::fill(v.begin(), v.end(), 0.0);
                v[attempt - 1] = 1.0;
            }
            for (int prev = 0; prev < comp; ++prev) {
                const std::vector<double>& u = out.components[static_cast<std::size_t>(prev)];
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += v[j] * u[j];
                for (std::size_t j = 0; j < d; ++j) v[j] -= dot * u[j];
            }
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (double& x : v) x /= norm;
                started = true;
            }
        }
        if (!started) throw std::runtime_error("top2_eigenvectors: no usable start vector");

        std::vector<double> w(d);
        double lambda = 0.0;
        for (int it = 0; it < max_iter; ++it) {
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                const double* row = work.data() + j * d;
                for (std::size_t k = 0; k < d; ++k) s += row[k] * v[k];
                w[j] = s;
            }
            // Deflation residue would otherwise let the first component creep
            // back in; re-orthogonalize every step.
            for (int prev = 0; prev < comp; ++prev) {
                const std::vector<double>& u = out.components[static_cast<std::size_t>(prev)];
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += w[j] * u[j];
                for (std::size_t j = 0; j < d; ++j) w[j] -= dot * u[j];
            }
            double norm = 0.0;
            for (double x : w) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-12 * std::max(1.0, std::abs(out.eigenvalues[0]))) {
                lambda = 0.0;
                break;  // null space: keep current v as an arbitrary unit vector
            }
            double delta = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double next = w[j] / norm;
                delta = std::max(delta, std::abs(next - v[j]));
                v[j] = next;
            }
            lambda = norm;
            if (delta < tol) break;
        }

        // Sign convention: largest-magnitude entry positive; magnitude ties
        // (e.g. the (1, -1)/sqrt(2) vector) resolve to the earliest index.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j) {
            if (std::abs(v[j]) > std::abs(v[arg]) + 1e-12) arg = j;
        }
        if (v[arg] < 0.0) {
            for (double& x : v) x = -x;
        }

        out.components[static_cast<std::size_t>(comp)] = v;
        out.eigenvalues[static_cast<std::size_t>(comp)] = lambda;

        if (comp == 0) {
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t k = 0; k < d; ++k) work[j * d + k] -= lambda * v[j] * v[k];
            }
        }
    }
    return out;
}

PcaModel fed_pca_round1(const std::vector<ClientPartition>& parts) {
    if (parts.empty()) throw std::invalid_argument("fed_pca_round1: no partitions");
    const std::size_t d = parts.front().data.n_features;
    if (d < 2) throw std::invalid_argument("fed_pca_round1: need >= 2 features");

    std::vector<MomentStats> stats(parts.size());
    const int n = static_cast<int>(parts.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
    for (int i = 0; i < n; ++i) {
        stats[static_cast<std::size_t>(i)] = compute_moments(parts[static_cast<std::size_t>(i)].data);
    }
    MomentStats merged = stats.front();
    for (std::size_t i = 1; i < stats.size(); ++i) merged = merge_moments(std::move(merged), stats[i]);

    PcaModel model;
    const double total = static_cast<double>(merged.n);
    model.mean.resize(d);
    model.stddev.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        model.mean[j] = merged.sum[j] / total;
        const double var = std::max(merged.sum_sq[j] / total - model.mean[j] * model.mean[j], 0.0);
        model.stddev[j] = std::max(std::sqrt(var), 1e-12);
    }
    const Top2 top = top2_eigenvectors(standardized_covariance(merged), d);
    model.components = top.components;
    model.eigenvalues = top.eigenvalues;
    return model;
}

std::vector<std::array<double, 2>> fed_pca_round2(const std::vector<ClientPartition>& parts,
                                                  const PcaModel& model) {
    const std::size_t d = model.mean.size();
    for (int c = 0; c < 2; ++c) {
        const std::vector<double>& u = model.components[static_cast<std::size_t>(c)];
        if (u.size() != d) throw std::invalid_argument("fed_pca_round2: component size mismatch");
        double norm = 0.0;
        for (double x : u) norm += x * x;
        if (std::abs(norm - 1.0) > 1e-6) {
            throw std::invalid_argument("fed_pca_round2: components must be unit norm");
        }
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += model.components[0][j] * model.components[1][j];
    if (std::abs(dot) > 1e-6) {
        throw std::invalid_argument("fed_pca_round2: components must be orthogonal");
    }

    std::vector<std::array<double, 2>> centroids(parts.size(), {0.0, 0.0});
    const int n = static_cast<int>(parts.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
    for (int i = 0; i < n; ++i) {
        const Dataset& data = parts[static_cast<std::size_t>(i)].data;
        if (data.n_features != d) {
            throw std::invalid_argument("fed_pca_round2: feature width mismatch");
        }
        double c0 = 0.0, c1 = 0.0;
        for (std::size_t s = 0; s < data.n_samples(); ++s) {
            const double* x = data.row(s);
            double p0 = 0.0, p1 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double z = (x[j] - model.mean[j]) / model.stddev[j];
                p0 += z * model.components[0][j];
                p1 += z * model.components[1][j];
            }
            c0 += p0;
            c1 += p1;
        }
        const double count = static_cast<double>(std::max<std::size_t>(data.n_samples(), 1));
        centroids[static_cast<std::size_t>(i)] = {c0 / count, c1 / count};
    }
    return centroids;
}

FeatureSkewResult detect_feature_skew(const std::vector<ClientPartition>& parts, double tau_feat) {
    if (parts.size() < 2) throw std::invalid_argument("detect_feature_skew: need >= 2 clients");
    const PcaModel model = fed_pca_round1(parts);
    FeatureSkewResult result;
    result.centroids = fed_pca_round2(parts, model);

    const std::size_t n = parts.size();
    result.distance_matrix.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = result.centroids[i][0] - result.centroids[j][0];
            const double dy = result.centroids[i][1] - result.centroids[j][1];
            const double dist = std::sqrt(dx * dx + dy * dy);
            result.distance_matrix[i * n + j] = dist;
            result.distance_matrix[j * n + i] = dist;
            result.max_distance = std::max(result.max_distance, dist);
        }
    }
    result.flag = result.max_distance > tau_feat;
    return result;
}

std::vector<double> divergence_scores(const std::vector<ModelParams>& params_list) {
    const std::size_t n = params_list.size();
    if (n < 3) throw std::invalid_argument("divergence_scores: need >= 3 clients");
    for (const ModelParams& p : params_list) {
        if (!p.same_shape(params_list.front())) {
            throw std::invalid_argument("divergence_scores: shape mismatch");
        }
    }

    std::vector<double> pairwise(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double total = 0.0;
            for (std::size_t l = 0; l < params_list[i].layers.size(); ++l) {
                const double* a = params_list[i].layers[l].data();
                const double* b = params_list[j].layers[l].data();
                double sq = 0.0;
                for (std::size_t c = 0; c < params_list[i].layers[l].size(); ++c) {
                    const double diff = a[c] - b[c];
                    sq += diff * diff;
                }
                total += std::sqrt(sq);
            }
            pairwise[i * n + j] = total;
            pairwise[j * n + i] = total;
        }
    }

    std::vector<double> div(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) s += pairwise[i * n + j];
        }
        div[i] = s / static_cast<double>(n - 1);
    }
    return div;
}

OutlierResult detect_outliers(const std::vector<ClientPartition>& parts,
                              const std::vector<int>& architecture,
                              const OutlierSettings& settings) {
    const std::size_t n = parts.size();
    if (n < 3) throw std::invalid_argument("detect_outliers: need >= 3 clients");
    if (settings.repetitions < 1 || settings.rep_threshold < 1) {
        throw std::invalid_argument("detect_outliers: repetitions and rep_threshold must be >= 1");
    }

    const StrategyConfig probe{StrategyName::fed_avg, {}};
    std::vector<std::vector<char>> rep_flags(
        static_cast<std::size_t>(settings.repetitions), std::vector<char>(n, 0));

#pragma omp parallel for schedule(dynamic) num_threads(settings.jobs) if (settings.jobs > 1)
    for (int rep = 0; rep < settings.repetitions; ++rep) {
        const std::uint64_t rep_seed =
            derive_seed(settings.seed, "outlier_rep", static_cast<std::uint64_t>(rep));
        ModelParams global = init_model(architecture, derive_seed(rep_seed, "init"));
        std::vector<char>& flags = rep_flags[static_cast<std::size_t>(rep)];

        std::vector<ModelParams> captured(n);
        std::vector<char> failed(n, 0);
        for (int round = 1; round <= 2; ++round) {
            std::vector<ClientUpdate> updates;
            updates.reserve(n);
            bool any_failed = false;
            for (std::size_t c = 0; c < n; ++c) {
                try {
                    ClientUpdate u = local_train(
                        global, parts[c].data, settings.train,
                        derive_seed(rep_seed, "train", static_cast<std::uint64_t>(round),
                                    static_cast<std::uint64_t>(parts[c].client_id)),
                        parts[c].client_id);
                    if (round == 2) captured[c] = u.params;
                    updates.push_back(std::move(u));
                } catch (const std::exception&) {
                    failed[c] = 1;
                    any_failed = true;
                    if (round == 2) captured[c] = global;
                }
            }
            if (round == 1) {
                if (updates.empty()) break;
                global = aggregate(probe, updates, global);
                if (!global.all_finite() || any_failed) {
                    // A client whose probe training diverges is itself the
                    // strongest outlier signal; flag it and stop this rep.
                    for (std::size_t c = 0; c < n; ++c) flags[c] = failed[c];
                    break;
                }
            } else {
                std::vector<double> div = divergence_scores(captured);
                std::vector<double> sorted;
                sorted.reserve(n);
                for (std::size_t c = 0; c < n; ++c) {
                    if (failed[c] != 0) {
                        flags[c] = 1;
                    } else {
                        sorted.push_back(div[c]);
                    }
                }
                if (sorted.empty()) break;
                std::sort(sorted.begin(), sorted.end());
                // Nearest-rank percentile on this repetition's score list.
                const double pos =
                    settings.percentile * static_cast<double>(sorted.size()) / 100.0;
                auto rank = static_cast<std::size_t>(std::ceil(pos - 1e-9));
                rank = std::clamp<std::size_t>(rank, 1, sorted.size());
                const double threshold = sorted[rank - 1];
                for (std::size_t c = 0; c < n; ++c) {
                    if (failed[c] == 0 && div[c] >= threshold) flags[c] = 1;
                }
            }
        }
    }

    OutlierResult result;
    result.flag_counts.assign(n, 0);
    for (const auto& flags : rep_flags) {
        for (std::size_t c = 0; c < n; ++c) result.flag_counts[c] += flags[c];
    }
    for (int count : result.flag_counts) {
        if (count >= settings.rep_threshold) result.flag = true;
    }
    return result;
}

HeterogeneityReport build_report(const std::vector<ClientPartition>& parts,
                                 const std::vector<int>& architecture, std::uint64_t seed,
                                 const DetectThresholds& thresholds, int jobs) {
    HeterogeneityReport report;
    report.thresholds = thresholds;

    const LabelSkewResult label = detect_label_skew(parts, thresholds.tau_label);
    report.label_skew = label.flag;
    report.max_jsd = label.max_jsd;
    report.per_client_jsd = label.per_client;

    const FeatureSkewResult feat = detect_feature_skew(parts, thresholds.tau_feat);
    report.feature_skew = feat.flag;
    report.max_centroid_distance = feat.max_distance;
    report.centroid_distance_matrix = feat.distance_matrix;

    OutlierSettings outlier_settings;
    outlier_settings.rep_threshold = thresholds.rep_threshold;
    outlier_settings.seed = derive_seed(seed, "outliers");
    outlier_settings.jobs = jobs;
    const OutlierResult outliers = detect_outliers(parts, architecture, outlier_settings);
    report.outlier_risk = outliers.flag;
    report.flag_counts = outliers.flag_counts;
    return report;
}

}  // namespace fedsel
