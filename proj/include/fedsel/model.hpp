#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedsel/dataset.hpp"

namespace fedsel {

/// Dense feed-forward classifier parameters: one flat vector per layer,
/// laid out as the (out x in) weight matrix row-major followed by the out
/// biases. Hidden layers use tanh; the output layer is softmax (or sigmoid
/// when it has a single unit).
struct ModelParams {
    std::vector<std::vector<double>> layers;

    bool same_shape(const ModelParams& other) const;
    bool all_finite() const;
    std::size_t total_size() const;
};

struct TrainSettings {
    int local_epochs = 1;
    double learning_rate = 0.01;
    int batch_size = 16;
    double proximal_mu = 0.0;  // 0 means plain SGD
};

struct ClientUpdate {
    int client_id = 0;
    ModelParams params;
    long num_examples = 0;
    double train_loss = 0.0;
};

/// Local training produced a non-finite loss or parameter.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Layer (in, out) sizes recovered from the flat vectors and the input width.
/// Throws std::invalid_argument when the lengths cannot come from a dense
/// stack on `input_dim` inputs.
std::vector<std::pair<std::size_t, std::size_t>> infer_layer_dims(const ModelParams& params,
                                                                  std::size_t input_dim);

/// Scaled-uniform (Glorot) weights, zero biases; deterministic given seed.
ModelParams init_model(const std::vector<int>& layer_sizes, std::uint64_t seed);

/// Output class probabilities for a single sample.
std::vector<double> predict_proba(const ModelParams& params, std::span<const double> x);

/// Mean loss over `batch` plus, when prox_center is non-null and mu > 0, the
/// proximal penalty (mu/2)||w - center||^2. grad_out receives the gradient
/// (same shape as params).
double loss_and_gradient(const ModelParams& params, const Dataset& data,
                         std::span<const std::size_t> batch, const ModelParams* prox_center,
                         double mu, ModelParams& grad_out);

/// Minibatch SGD from a copy of `global`; epoch order is reshuffled from the
/// client seed, so runs are bit-reproducible. Throws TrainingDiverged on
/// non-finite loss or parameters.
ClientUpdate local_train(const ModelParams& global, const Dataset& data,
                         const TrainSettings& settings, std::uint64_t seed, int client_id = 0);

/// (accuracy, mean loss) with argmax predictions; ties go to the lower class.
std::pair<double, double> evaluate(const ModelParams& params, const Dataset& data);

/// Structured-text checkpoint: a header with the per-layer lengths followed
/// by the values, written so a round trip is bit-exact.
void save_params(const ModelParams& params, std::ostream& out);
ModelParams load_params(std::istream& in);

}  // namespace fedsel
