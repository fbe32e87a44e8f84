#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsel::ref {

namespace {

std::vector<std::size_t> client_id_order(const std::vector<ClientUpdate>& updates) {
    std::vector<std::size_t> order(updates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return updates[a].client_id < updates[b].client_id;
    });
    return order;
}

ModelParams zero_like(const ModelParams& shape) {
    ModelParams out;
    out.layers.resize(shape.layers.size());
    for (std::size_t l = 0; l < shape.layers.size(); ++l) {
        out.layers[l].assign(shape.layers[l].size(), 0.0);
    }
    return out;
}

ModelParams weighted_mean_of(const std::vector<ClientUpdate>& updates,
                             const std::vector<std::size_t>& order) {
    double total = 0.0;
    for (std::size_t u : order) total += static_cast<double>(updates[u].num_examples);
    ModelParams out = zero_like(updates[order.front()].params);
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].size(); ++i) {
            double s = 0.0;
            for (std::size_t u : order) {
                s += static_cast<double>(updates[u].num_examples) * updates[u].params.layers[l][i];
            }
            out.layers[l][i] = s / total;
        }
    }
    return out;
}

}  // namespace

ModelParams weighted_mean(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("ref::weighted_mean: no updates");
    return weighted_mean_of(updates, client_id_order(updates));
}

ModelParams coordinate_median(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw std::invalid_argument("ref::coordinate_median: no updates");
    const std::size_t n = updates.size();
    ModelParams out = zero_like(updates.front().params);
    std::vector<double> buf(n);
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].size(); ++i) {
            for (std::size_t u = 0; u < n; ++u) buf[u] = updates[u].params.layers[l][i];
            std::sort(buf.begin(), buf.end());
            out.layers[l][i] = (n % 2 == 1) ? buf[n / 2] : (buf[n / 2 - 1] + buf[n / 2]) / 2.0;
        }
    }
    return out;
}

ModelParams trimmed_mean(const std::vector<ClientUpdate>& updates, double beta) {
    if (updates.empty()) throw std::invalid_argument("ref::trimmed_mean: no updates");
    const std::size_t n = updates.size();
    const auto k = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n) + 1e-9));
    if (n <= 2 * k) throw std::invalid_argument("ref::trimmed_mean: nothing left after trimming");
    ModelParams out = zero_like(updates.front().params);
    std::vector<double> buf(n);
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (std::size_t i = 0; i < out.layers[l].size(); ++i) {
            for (std::size_t u = 0; u < n; ++u) buf[u] = updates[u].params.layers[l][i];
            std::sort(buf.begin(), buf.end());
            double s = 0.0;
            for (std::size_t u = k; u < n - k; ++u) s += buf[u];
            out.layers[l][i] = s / static_cast<double>(n - 2 * k);
        }
    }
    return out;
}

ModelParams krum(const std::vector<ClientUpdate>& updates, long f, long m) {
    const std::vector<std::size_t> order = client_id_order(updates);
    const std::size_t n = order.size();
    if (static_cast<long>(n) - f - 2 < 1) throw std::invalid_argument("ref::krum: n - f - 2 < 1");
    if (m < 1 || m > static_cast<long>(n)) throw std::invalid_argument("ref::krum: bad m");

    auto sq_dist = [&](std::size_t a, std::size_t b) {
        const ModelParams& pa = updates[order[a]].params;
        const ModelParams& pb = updates[order[b]].params;
        double s = 0.0;
        for (std::size_t l = 0; l < pa.layers.size(); ++l) {
            for (std::size_t i = 0; i < pa.layers[l].size(); ++i) {
                const double d = pa.layers[l][i] - pb.layers[l][i];
                s += d * d;
            }
        }
        return s;
    };

    const auto neighbors = static_cast<std::size_t>(static_cast<long>(n) - f - 2);
    std::vector<double> score(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row;
        row.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) row.push_back(sq_dist(i, j));
        }
        std::sort(row.begin(), row.end());
        double s = 0.0;
        for (std::size_t t = 0; t < neighbors; ++t) s += row[t];
        score[i] = s;
    }

    std::vector<std::size_t> ranked(n);
    std::iota(ranked.begin(), ranked.end(), std::size_t{0});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    std::vector<std::size_t> kept(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(kept.begin(), kept.end());
    std::vector<std::size_t> kept_updates;
    kept_updates.reserve(kept.size());
    for (std::size_t r : kept) kept_updates.push_back(order[r]);
    return weighted_mean_of(updates, kept_updates);
}

std::vector<double> divergence_scores(const std::vector<ModelParams>& params_list) {
    const std::size_t n = params_list.size();
    std::vector<double> div(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double total = 0.0;
            for (std::size_t l = 0; l < params_list[i].layers.size(); ++l) {
                double sq = 0.0;
                for (std::size_t c = 0; c < params_list[i].layers[l].size(); ++c) {
                    const double d = params_list[i].layers[l][c] - params_list[j].layers[l][c];
                    sq += d * d;
                }
                total += std::sqrt(sq);
            }
            s += total;
        }
        div[i] = s / static_cast<double>(n - 1);
    }
    return div;
}

long double jsd_longdouble(const std::vector<double>& p, const std::vector<double>& q) {
    const long double ln2 = 0.693147180559945309417232121458176568L;
    long double acc = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const long double pi = p[i];
        const long double qi = q[i];
        const long double mi = 0.5L * (pi + qi);
        if (pi > 0.0L) acc += 0.5L * pi * std::log(pi / mi);
        if (qi > 0.0L) acc += 0.5L * qi * std::log(qi / mi);
    }
    return acc / ln2;
}

std::vector<double> pooled_standardized_covariance(const std::vector<ClientPartition>& parts) {
    if (parts.empty()) throw std::invalid_argument("ref::pooled covariance: no partitions");
    const std::size_t d = parts.front().data.n_features;
    std::size_t total = 0;
    for (const ClientPartition& p : parts) total += p.data.n_samples();
    if (total == 0) throw std::invalid_argument("ref::pooled covariance: no samples");

    std::vector<double> mean(d, 0.0);
    for (const ClientPartition& p : parts) {
        for (std::size_t i = 0; i < p.data.n_samples(); ++i) {
            const double* x = p.data.row(i);
            for (std::size_t j = 0; j < d; ++j) mean[j] += x[j];
        }
    }
    for (double& v : mean) v /= static_cast<double>(total);

    std::vector<double> var(d, 0.0);
    for (const ClientPartition& p : parts) {
        for (std::size_t i = 0; i < p.data.n_samples(); ++i) {
            const double* x = p.data.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                const double c = x[j] - mean[j];
                var[j] += c * c;
            }
        }
    }
    std::vector<double> stddev(d);
    for (std::size_t j = 0; j < d; ++j) {
        stddev[j] = std::max(std::sqrt(var[j] / static_cast<double>(total)), 1e-12);
    }

    std::vector<double> cov(d * d, 0.0);
    std::vector<double> z(d);
    for (const ClientPartition& p : parts) {
        for (std::size_t i = 0; i < p.data.n_samples(); ++i) {
            const double* x = p.data.row(i);
            for (std::size_t j = 0; j < d; ++j) z[j] = (x[j] - mean[j]) / stddev[j];
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t k = 0; k < d; ++k) cov[j * d + k] += z[j] * z[k];
            }
        }
    }
    for (double& v : cov) v /= static_cast<double>(total);
    return cov;
}

EigenDecomposition jacobi_eigen(const std::vector<double>& matrix, std::size_t d) {
    if (matrix.size() != d * d) throw std::invalid_argument("ref::jacobi_eigen: bad matrix size");
    std::vector<double> a = matrix;
    std::vector<double> v(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        }
        if (off < 1e-28) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    const double akp = a[k * d + p];
                    const double akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double apk = a[p * d + k];
                    const double aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double vkp = v[k * d + p];
                    const double vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a[x * d + x] > a[y * d + y]; });

    EigenDecomposition out;
    out.values.reserve(d);
    out.vectors.reserve(d);
    for (std::size_t col : order) {
        out.values.push_back(a[col * d + col]);
        std::vector<double> vec(d);
        for (std::size_t k = 0; k < d; ++k) vec[k] = v[k * d + col];
        std::size_t arg = 0;
        for (std::size_t k = 1; k < d; ++k) {
            if (std::abs(vec[k]) > std::abs(vec[arg]) + 1e-12) arg = k;
        }
        if (vec[arg] < 0.0) {
            for (double& x : vec) x = -x;
        }
        out.vectors.push_back(std::move(vec));
    }
    return out;
}

double logistic_regression_accuracy(const Dataset& data, int epochs, double lr) {
    if (data.n_classes() != 2) {
        throw std::invalid_argument("ref::logistic_regression: binary data only");
    }
    const std::size_t d = data.n_features;
    const std::size_t n = data.n_samples();
    std::vector<double> w(d + 1, 0.0);  // bias last

    for (int e = 0; e < epochs; ++e) {
        std::vector<double> grad(d + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* x = data.row(i);
            double z = w[d];
            for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double err = p - static_cast<double>(data.labels[i]);
            for (std::size_t j = 0; j < d; ++j) grad[j] += err * x[j];
            grad[d] += err;
        }
        for (std::size_t j = 0; j <= d; ++j) w[j] -= lr * grad[j] / static_cast<double>(n);
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = data.row(i);
        double z = w[d];
        for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
        if ((z >= 0.0 ? 1 : 0) == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace fedsel::ref
