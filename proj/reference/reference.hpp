#pragma once

// Serial reference implementations. These are deliberately naive and
// independent of the OpenMP kernels in src/: tests compare the two paths and
// the benchmark target times them against each other. Keep this code simple
// and obviously correct rather than fast.

#include <array>
#include <cstddef>
#include <vector>

#include "fedsel/dataset.hpp"
#include "fedsel/model.hpp"

namespace fedsel::ref {

/// num_examples-weighted coordinate mean, summed in the given order.
ModelParams weighted_mean(const std::vector<ClientUpdate>& updates);

/// Unweighted coordinate median; even counts average the two middle values.
ModelParams coordinate_median(const std::vector<ClientUpdate>& updates);

/// Drop floor(beta*n) values at each end per coordinate, average the rest
/// in ascending order.
ModelParams trimmed_mean(const std::vector<ClientUpdate>& updates, double beta);

/// Brute-force Multi-Krum: all pairwise squared distances, per-client scores
/// from the n-f-2 nearest, weighted mean of the m lowest-scoring updates
/// (ties by lowest client_id).
ModelParams krum(const std::vector<ClientUpdate>& updates, long f, long m);

/// Mean pairwise divergence per client, via the direct double loop.
std::vector<double> divergence_scores(const std::vector<ModelParams>& params_list);

/// High-precision JSD (base 2) evaluated in long double.
long double jsd_longdouble(const std::vector<double>& p, const std::vector<double>& q);

/// Covariance of the pooled, centrally standardized data: two-pass, pooled
/// mean/std computed directly from the stacked rows.
std::vector<double> pooled_standardized_covariance(const std::vector<ClientPartition>& parts);

/// All eigenpairs of a symmetric matrix by cyclic Jacobi rotations, sorted by
/// descending eigenvalue, each vector sign-fixed (largest-magnitude entry
/// positive).
struct EigenDecomposition {
    std::vector<double> values;                 // descending
    std::vector<std::vector<double>> vectors;   // vectors[i] pairs with values[i]
};
EigenDecomposition jacobi_eigen(const std::vector<double>& matrix, std::size_t d);

/// Plain logistic regression trained by full-batch gradient descent; used as
/// the learnability oracle for the synthetic generator. Returns accuracy on
/// the training data.
double logistic_regression_accuracy(const Dataset& data, int epochs = 500, double lr = 0.5);

/// Central finite-difference gradient of an arbitrary scalar function of
/// model parameters.
template <typename LossFn>
ModelParams finite_difference_gradient(const ModelParams& at, LossFn loss, double h = 1e-6) {
    ModelParams grad = at;
    ModelParams point = at;
    for (std::size_t l = 0; l < at.layers.size(); ++l) {
        for (std::size_t i = 0; i < at.layers[l].size(); ++i) {
            const double orig = point.layers[l][i];
            point.layers[l][i] = orig + h;
            const double up = loss(point);
            point.layers[l][i] = orig - h;
            const double down = loss(point);
            point.layers[l][i] = orig;
            grad.layers[l][i] = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

}  // namespace fedsel::ref
