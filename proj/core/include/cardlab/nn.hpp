#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cardlab/datasets.hpp"

namespace cardlab {

enum class Activation { Sigmoid, Softplus, Identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation act = Activation::Identity;
    std::size_t offset = 0;  // start of W in the flat parameter vector; b follows W
};

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fully connected net. Parameters live in one flat vector, laid out per layer
// as row-major W (out x in) followed by b (out).
class DenseNet {
public:
    DenseNet() = default;
    // dims = {in, h1, ..., out}; acts has dims.size() - 1 entries.
    DenseNet(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
             std::uint64_t seed);
    // Copies get a fresh identity so caches never cross between instances.
    DenseNet(const DenseNet& other);
    DenseNet& operator=(const DenseNet& other);
    DenseNet(DenseNet&&) noexcept = default;
    DenseNet& operator=(DenseNet&&) noexcept = default;

    std::size_t input_dim() const { return shapes_.empty() ? 0 : shapes_.front().in; }
    std::size_t output_dim() const { return shapes_.empty() ? 0 : shapes_.back().out; }
    std::size_t n_layers() const { return shapes_.size(); }
    std::size_t n_params() const { return theta_.size(); }

    const std::vector<LayerShape>& shapes() const { return shapes_; }
    std::span<const double> params() const { return theta_; }
    // Any mutable access counts as a mutation and invalidates outstanding caches.
    std::span<double> mutable_params();
    void set_params(std::span<const double> p);

    double* weights(std::size_t layer);
    double* bias(std::size_t layer);
    const double* weights(std::size_t layer) const;
    const double* bias(std::size_t layer) const;

    std::uint64_t generation() const { return generation_; }
    std::uint64_t id() const { return id_; }

    std::string to_json() const;
    static DenseNet from_json(std::string_view text);

private:
    std::vector<LayerShape> shapes_;
    std::vector<double> theta_;
    std::uint64_t generation_ = 0;
    std::uint64_t id_ = 0;

    void assign_id();
};

struct ForwardCache {
    std::uint64_t net_id = 0;
    std::uint64_t generation = 0;
    std::vector<std::vector<double>> pre;   // per layer, before activation
    std::vector<std::vector<double>> post;  // post[0] = input, post[l+1] = layer l output
};

struct Gradients {
    std::vector<double> params;  // congruent to DenseNet::params()
    std::vector<double> input;

    void reset(const DenseNet& net);
};

std::vector<double> forward(const DenseNet& net, std::span<const double> input,
                            ForwardCache* cache = nullptr);

// Adds the gradient for one sample into `acc` (which must be congruent to
// `net`). Throws std::logic_error if the cache was produced by another net or
// before the last parameter change.
void backward_accumulate(const DenseNet& net, const ForwardCache& cache,
                         std::span<const double> output_grad, Gradients& acc);
Gradients backward(const DenseNet& net, const ForwardCache& cache,
                   std::span<const double> output_grad);

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(const DenseNet& net, double lr = 1e-4);
    AdamState() = default;
};

// Rejects the whole update (state untouched) and throws DivergenceError on any
// non-finite gradient entry.
void adam_step(DenseNet& net, AdamState& state, std::span<const double> grads);

double activation_value(Activation a, double z);
double activation_derivative(Activation a, double z);

std::vector<double> one_hot(int k, int n_classes);

struct PretrainOptions {
    std::size_t epochs = 500;
    std::size_t batch = 128;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    // Called after each epoch with (epoch index starting at 1, net, epoch MSE).
    std::function<void(std::size_t, const DenseNet&, double)> on_epoch;
};

struct PretrainResult {
    DenseNet net;
    std::vector<double> mse;  // per epoch training MSE
    double final_mse = 0.0;   // full-pass MSE after training
};

// f_phi: one-hot(x) -> 128 sigmoid -> 64 sigmoid -> 2 identity, trained by MSE.
DenseNet make_cond_mean_net(int n_classes, std::uint64_t seed);
PretrainResult pretrain_cond_mean(const std::vector<LabeledSample>& samples, int n_classes,
                                  const PretrainOptions& opt);

// Mean squared residual norm of f_phi over the samples.
double cond_mean_mse(const DenseNet& f_net, const std::vector<LabeledSample>& samples,
                     int n_classes);

// Per-epoch shuffle order, derived from (seed, epoch) only.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

}  // namespace cardlab
