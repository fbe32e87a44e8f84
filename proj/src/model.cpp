#include "fedsel/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "fedsel/rng.hpp"

namespace fedsel {

namespace {

// Per-sample forward pass. activations[0] is the input; activations[l+1] the
// output of layer l (post tanh for hidden layers, raw logits for the last).
void forward(const ModelParams& params,
             const std::vector<std::pair<std::size_t, std::size_t>>& dims,
             std::span<const double> x, std::vector<std::vector<double>>& activations) {
    activations.resize(params.layers.size() + 1);
    activations[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto [in, out] = dims[l];
        const std::vector<double>& w = params.layers[l];
        const std::vector<double>& a = activations[l];
        std::vector<double>& z = activations[l + 1];
        z.assign(out, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            double s = w[out * in + o];  // bias
            const double* row = w.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
            z[o] = s;
        }
        if (l + 1 < params.layers.size()) {
            for (double& v : z) v = std::tanh(v);
        }
    }
}

// Class probabilities from output logits: softmax, or sigmoid when a single
// output unit encodes the binary positive class.
std::vector<double> output_probs(const std::vector<double>& logits) {
    if (logits.size() == 1) {
        const double p = 1.0 / (1.0 + std::exp(-logits[0]));
        return {1.0 - p, p};
    }
    std::vector<double> p(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - m);
        denom += p[k];
    }
    for (double& v : p) v /= denom;
    return p;
}

// Stable cross-entropy of the true class given raw logits.
double cross_entropy(const std::vector<double>& logits, int label) {
    if (logits.size() == 1) {
        // log(1 + exp(-z*y')) with y' in {-1, +1}
        const double z = logits[0];
        const double zy = (label == 1) ? z : -z;
        return zy > 0 ? std::log1p(std::exp(-zy)) : -zy + std::log1p(std::exp(zy));
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - m);
    return std::log(denom) + m - logits[static_cast<std::size_t>(label)];
}

}  // namespace

bool ModelParams::same_shape(const ModelParams& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].size() != other.layers[l].size()) return false;
    }
    return true;
}

bool ModelParams::all_finite() const {
    for (const auto& layer : layers) {
        for (double v : layer) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

std::size_t ModelParams::total_size() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.size();
    return n;
}

std::vector<std::pair<std::size_t, std::size_t>> infer_layer_dims(const ModelParams& params,
                                                                  std::size_t input_dim) {
    if (params.layers.empty()) throw std::invalid_argument("model: no layers");
    std::vector<std::pair<std::size_t, std::size_t>> dims;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const std::size_t len = params.layers[l].size();
        if (in == 0 || len % (in + 1) != 0) {
            throw std::invalid_argument("model: layer " + std::to_string(l) +
                                        " size does not match input width " + std::to_string(in));
        }
        const std::size_t out = len / (in + 1);
        dims.emplace_back(in, out);
        in = out;
    }
    return dims;
}

ModelParams init_model(const std::vector<int>& layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw std::invalid_argument("init_model: need >= 2 layer sizes");
    for (int s : layer_sizes) {
        if (s < 1) throw std::invalid_argument("init_model: layer sizes must be positive");
    }
    Rng rng(derive_seed(seed, "init_model"));
    ModelParams params;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const auto in = static_cast<std::size_t>(layer_sizes[l]);
        const auto out = static_cast<std::size_t>(layer_sizes[l + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(out * in + out, 0.0);
        for (std::size_t i = 0; i < out * in; ++i) w[i] = rng.uniform(-limit, limit);
        // biases stay zero
        params.layers.push_back(std::move(w));
    }
    return params;
}

std::vector<double> predict_proba(const ModelParams& params, std::span<const double> x) {
    const auto dims = infer_layer_dims(params, x.size());
    std::vector<std::vector<double>> act;
    forward(params, dims, x, act);
    return output_probs(act.back());
}

double loss_and_gradient(const ModelParams& params, const Dataset& data,
                         std::span<const std::size_t> batch, const ModelParams* prox_center,
                         double mu, ModelParams& grad_out) {
    if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
    const auto dims = infer_layer_dims(params, data.n_features);
    const std::size_t n_layers = params.layers.size();

    grad_out.layers.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        grad_out.layers[l].assign(params.layers[l].size(), 0.0);
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    std::vector<std::vector<double>> act;
    std::vector<double> delta, delta_prev;

    for (std::size_t idx : batch) {
        const std::span<const double> x(data.row(idx), data.n_features);
        const int label = data.labels[idx];
        forward(params, dims, x, act);
        loss += cross_entropy(act.back(), label) * inv_b;

        // Output delta: dLoss/dlogits, averaged over the batch.
        const std::vector<double> probs = output_probs(act.back());
        const std::size_t out_dim = dims.back().second;
        delta.assign(out_dim, 0.0);
        if (out_dim == 1) {
            delta[0] = (probs[1] - (label == 1 ? 1.0 : 0.0)) * inv_b;
        } else {
            for (std::size_t k = 0; k < out_dim; ++k) {
                delta[k] = (probs[k] - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_b;
            }
        }

        for (std::size_t l = n_layers; l-- > 0;) {
            const auto [in, out] = dims[l];
            const std::vector<double>& a = act[l];
            std::vector<double>& g = grad_out.layers[l];
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                double* grow = g.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
                g[out * in + o] += d;  // bias
            }
            if (l == 0) break;
            const std::vector<double>& w = params.layers[l];
            delta_prev.assign(in, 0.0);
            for (std::size_t o = 0; o < out; ++o) {
                const double d = delta[o];
                const double* row = w.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) delta_prev[i] += d * row[i];
            }
            // through tanh
            for (std::size_t i = 0; i < in; ++i) delta_prev[i] *= 1.0 - a[i] * a[i];
            delta.swap(delta_prev);
        }
    }

    if (prox_center != nullptr && mu > 0.0) {
        if (!params.same_shape(*prox_center)) {
            throw std::invalid_argument("loss_and_gradient: proximal center shape mismatch");
        }
        double sq = 0.0;
        for (std::size_t l = 0; l < n_layers; ++l) {
            const std::vector<double>& w = params.layers[l];
            const std::vector<double>& c = prox_center->layers[l];
            std::vector<double>& g = grad_out.layers[l];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double diff = w[i] - c[i];
                g[i] += mu * diff;
                sq += diff * diff;
            }
        }
        loss += 0.5 * mu * sq;
    }
    return loss;
}

ClientUpdate local_train(const ModelParams& global, const Dataset& data,
                         const TrainSettings& settings, std::uint64_t seed, int client_id) {
    if (data.n_samples() == 0) throw std::invalid_argument("local_train: empty dataset");
    if (settings.local_epochs < 1) throw std::invalid_argument("local_train: local_epochs >= 1");
    if (settings.batch_size < 1) throw std::invalid_argument("local_train: batch_size >= 1");
    if (settings.learning_rate < 0.0 || settings.proximal_mu < 0.0) {
        throw std::invalid_argument("local_train: negative learning_rate or proximal_mu");
    }
    infer_layer_dims(global, data.n_features);  // shape check up front

    ModelParams w = global;
    ModelParams grad;
    Rng rng(derive_seed(seed, "local_train"));
    const std::size_t n = data.n_samples();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const auto b = static_cast<std::size_t>(settings.batch_size);
    double epoch_loss = 0.0;
    for (int epoch = 0; epoch < settings.local_epochs; ++epoch) {
        rng.shuffle(order);
        epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += b) {
            const std::size_t len = std::min(b, n - start);
            const std::span<const std::size_t> batch(order.data() + start, len);
            const double loss =
                loss_and_gradient(w, data, batch, &global, settings.proximal_mu, grad);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("client " + std::to_string(client_id) +
                                       ": non-finite loss at epoch " + std::to_string(epoch));
            }
            epoch_loss += loss * static_cast<double>(len) / static_cast<double>(n);
            for (std::size_t l = 0; l < w.layers.size(); ++l) {
                double* wp = w.layers[l].data();
                const double* gp = grad.layers[l].data();
                for (std::size_t i = 0; i < w.layers[l].size(); ++i) {
                    wp[i] -= settings.learning_rate * gp[i];
                }
            }
        }
    }
    if (!w.all_finite()) {
        throw TrainingDiverged("client " + std::to_string(client_id) +
                               ": non-finite parameters after training");
    }
    return {client_id, std::move(w), static_cast<long>(n), epoch_loss};
}

void save_params(const ModelParams& params, std::ostream& out) {
    out << "fedsel-model 1\n" << params.layers.size() << "\n";
    for (const auto& layer : params.layers) out << layer.size() << " ";
    out << "\n";
    char buf[40];
    for (const auto& layer : params.layers) {
        for (std::size_t i = 0; i < layer.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", layer[i]);
            out << buf << (i + 1 == layer.size() ? "" : " ");
        }
        out << "\n";
    }
}

ModelParams load_params(std::istream& in) {
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (!in || magic != "fedsel-model" || version != 1) {
        throw std::invalid_argument("load_params: not a fedsel model checkpoint");
    }
    std::size_t n_layers = 0;
    in >> n_layers;
    std::vector<std::size_t> lengths(n_layers);
    for (std::size_t& len : lengths) in >> len;
    if (!in) throw std::invalid_argument("load_params: malformed layer header");
    ModelParams params;
    params.layers.reserve(n_layers);
    for (std::size_t len : lengths) {
        std::vector<double> layer(len);
        for (double& v : layer) in >> v;
        params.layers.push_back(std::move(layer));
    }
    if (!in) throw std::invalid_argument("load_params: truncated checkpoint");
    return params;
}

std::pair<double, double> evaluate(const ModelParams& params, const Dataset& data) {
    if (data.n_samples() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const auto dims = infer_layer_dims(params, data.n_features);
    std::vector<std::vector<double>> act;
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        forward(params, dims, std::span<const double>(data.row(i), data.n_features), act);
        loss += cross_entropy(act.back(), data.labels[i]);
        const std::vector<double> probs = output_probs(act.back());
        std::size_t arg = 0;
        for (std::size_t k = 1; k < probs.size(); ++k) {
            if (probs[k] > probs[arg]) arg = k;
        }
        if (static_cast<int>(arg) == data.labels[i]) ++correct;
    }
    const auto n = static_cast<double>(data.n_samples());
    return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace fedsel
