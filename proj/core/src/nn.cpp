#include "cardlab/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "cardlab/rng.hpp"

namespace cardlab {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

constexpr const char* kSchema = "cardlab.densenet/1";

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Softplus: return "softplus";
        case Activation::Identity: return "identity";
    }
    return "?";
}

Activation activation_from_string(std::string_view s) {
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "softplus") return Activation::Softplus;
    if (s == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

double activation_value(Activation a, double z) {
    switch (a) {
        case Activation::Sigmoid: return sigmoid(z);
        case Activation::Softplus: return z > 30.0 ? z : std::log1p(std::exp(z));
        case Activation::Identity: return z;
    }
    return z;
}

double activation_derivative(Activation a, double z) {
    switch (a) {
        case Activation::Sigmoid: {
            const double s = sigmoid(z);
            return s * (1.0 - s);
        }
        case Activation::Softplus: return sigmoid(z);
        case Activation::Identity: return 1.0;
    }
    return 1.0;
}

void DenseNet::assign_id() { id_ = g_next_id.fetch_add(1); }

DenseNet::DenseNet(const std::vector<std::size_t>& dims, const std::vector<Activation>& acts,
                   std::uint64_t seed) {
    if (dims.size() < 2 || acts.size() + 1 != dims.size())
        throw std::invalid_argument("DenseNet: need dims.size() == acts.size() + 1 >= 2");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        if (dims[l] == 0 || dims[l + 1] == 0) throw std::invalid_argument("DenseNet: zero width");
        shapes_.push_back({dims[l], dims[l + 1], acts[l], off});
        off += dims[l] * dims[l + 1] + dims[l + 1];
    }
    theta_.assign(off, 0.0);
    Rng rng(seed);
    for (const auto& sh : shapes_) {
        const double a = 1.0 / std::sqrt(static_cast<double>(sh.in));
        for (std::size_t i = 0; i < sh.in * sh.out + sh.out; ++i)
            theta_[sh.offset + i] = rng.uniform(-a, a);
    }
    assign_id();
}

DenseNet::DenseNet(const DenseNet& other)
    : shapes_(other.shapes_), theta_(other.theta_), generation_(0) {
    assign_id();
}

DenseNet& DenseNet::operator=(const DenseNet& other) {
    if (this != &other) {
        shapes_ = other.shapes_;
        theta_ = other.theta_;
        ++generation_;
        assign_id();
    }
    return *this;
}

std::span<double> DenseNet::mutable_params() {
    ++generation_;
    return theta_;
}

void DenseNet::set_params(std::span<const double> p) {
    if (p.size() != theta_.size()) throw std::invalid_argument("set_params: size mismatch");
    std::copy(p.begin(), p.end(), theta_.begin());
    ++generation_;
}

double* DenseNet::weights(std::size_t l) {
    ++generation_;
    return theta_.data() + shapes_.at(l).offset;
}
double* DenseNet::bias(std::size_t l) {
    ++generation_;
    const auto& sh = shapes_.at(l);
    return theta_.data() + sh.offset + sh.in * sh.out;
}
const double* DenseNet::weights(std::size_t l) const { return theta_.data() + shapes_.at(l).offset; }
const double* DenseNet::bias(std::size_t l) const {
    const auto& sh = shapes_.at(l);
    return theta_.data() + sh.offset + sh.in * sh.out;
}

std::string DenseNet::to_json() const {
    nlohmann::json j;
    j["schema"] = kSchema;
    auto layers = nlohmann::json::array();
    for (std::size_t l = 0; l < shapes_.size(); ++l) {
        const auto& sh = shapes_[l];
        const double* w = weights(l);
        const double* b = bias(l);
        layers.push_back({{"in", sh.in},
                          {"out", sh.out},
                          {"activation", std::string(to_string(sh.act))},
                          {"weights", std::vector<double>(w, w + sh.in * sh.out)},
                          {"bias", std::vector<double>(b, b + sh.out)}});
    }
    j["layers"] = layers;
    return j.dump();
}

DenseNet DenseNet::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: ") + e.what());
    }
    if (!j.contains("schema") || j["schema"] != kSchema)
        throw std::runtime_error("checkpoint: missing or unsupported schema tag");
    DenseNet net;
    std::size_t off = 0;
    for (const auto& L : j.at("layers")) {
        LayerShape sh{L.at("in").get<std::size_t>(), L.at("out").get<std::size_t>(),
                      activation_from_string(L.at("activation").get<std::string>()), off};
        if (!net.shapes_.empty() && net.shapes_.back().out != sh.in)
            throw std::runtime_error("checkpoint: layer dimensions do not chain");
        auto w = L.at("weights").get<std::vector<double>>();
        auto b = L.at("bias").get<std::vector<double>>();
        if (w.size() != sh.in * sh.out || b.size() != sh.out)
            throw std::runtime_error("checkpoint: parameter array size mismatch");
        net.theta_.insert(net.theta_.end(), w.begin(), w.end());
        net.theta_.insert(net.theta_.end(), b.begin(), b.end());
        net.shapes_.push_back(sh);
        off += w.size() + b.size();
    }
    if (net.shapes_.empty()) throw std::runtime_error("checkpoint: no layers");
    for (double v : net.theta_)
        if (!std::isfinite(v)) throw std::runtime_error("checkpoint: non-finite parameter");
    net.assign_id();
    return net;
}

void Gradients::reset(const DenseNet& net) {
    params.assign(net.n_params(), 0.0);
    input.assign(net.input_dim(), 0.0);
}

std::vector<double> forward(const DenseNet& net, std::span<const double> input, ForwardCache* cache) {
    if (input.size() != net.input_dim())
        throw std::invalid_argument("forward: input has " + std::to_string(input.size()) +
                                    " entries, net expects " + std::to_string(net.input_dim()));
    std::vector<double> a(input.begin(), input.end());
    if (cache) {
        cache->net_id = net.id();
        cache->generation = net.generation();
        cache->pre.resize(net.n_layers());
        cache->post.resize(net.n_layers() + 1);
        cache->post[0] = a;
    }
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        const auto& sh = net.shapes()[l];
        const double* W = net.weights(l);
        const double* b = net.bias(l);
        std::vector<double> z(sh.out);
        for (std::size_t o = 0; o < sh.out; ++o) {
            double acc = b[o];
            const double* row = W + o * sh.in;
            for (std::size_t i = 0; i < sh.in; ++i) acc += row[i] * a[i];
            z[o] = acc;
        }
        std::vector<double> h(sh.out);
        for (std::size_t o = 0; o < sh.out; ++o) h[o] = activation_value(sh.act, z[o]);
        if (cache) {
            cache->pre[l] = z;
            cache->post[l + 1] = h;
        }
        a = std::move(h);
    }
    return a;
}

void backward_accumulate(const DenseNet& net, const ForwardCache& cache,
                         std::span<const double> output_grad, Gradients& acc) {
    if (cache.net_id != net.id() || cache.generation != net.generation())
        throw std::logic_error("backward: cache is stale or from a different net");
    if (cache.pre.size() != net.n_layers()) throw std::logic_error("backward: cache shape mismatch");
    if (output_grad.size() != net.output_dim())
        throw std::invalid_argument("backward: output gradient size mismatch");
    if (acc.params.size() != net.n_params()) acc.reset(net);

    std::vector<double> g(output_grad.begin(), output_grad.end());
    for (std::size_t l = net.n_layers(); l-- > 0;) {
        const auto& sh = net.shapes()[l];
        const auto& z = cache.pre[l];
        const auto& a_in = cache.post[l];
        for (std::size_t o = 0; o < sh.out; ++o) g[o] *= activation_derivative(sh.act, z[o]);
        double* dW = acc.params.data() + sh.offset;
        double* db = dW + sh.in * sh.out;
        for (std::size_t o = 0; o < sh.out; ++o) {
            db[o] += g[o];
            double* row = dW + o * sh.in;
            for (std::size_t i = 0; i < sh.in; ++i) row[i] += g[o] * a_in[i];
        }
        const double* W = net.weights(l);
        std::vector<double> gin(sh.in, 0.0);
        for (std::size_t o = 0; o < sh.out; ++o) {
            const double* row = W + o * sh.in;
            for (std::size_t i = 0; i < sh.in; ++i) gin[i] += row[i] * g[o];
        }
        g = std::move(gin);
    }
    for (std::size_t i = 0; i < g.size(); ++i) acc.input[i] += g[i];
}

Gradients backward(const DenseNet& net, const ForwardCache& cache,
                   std::span<const double> output_grad) {
    Gradients gr;
    gr.reset(net);
    backward_accumulate(net, cache, output_grad, gr);
    return gr;
}

AdamState::AdamState(const DenseNet& net, double lr_)
    : m(net.n_params(), 0.0), v(net.n_params(), 0.0), lr(lr_) {}

void adam_step(DenseNet& net, AdamState& st, std::span<const double> grads) {
    if (grads.size() != net.n_params() || st.m.size() != net.n_params())
        throw std::invalid_argument("adam_step: gradient/state not congruent with net");
    for (std::size_t i = 0; i < grads.size(); ++i)
        if (!std::isfinite(grads[i]))
            throw DivergenceError("adam_step: non-finite gradient at parameter " + std::to_string(i));
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    auto theta = net.mutable_params();
    for (std::size_t i = 0; i < grads.size(); ++i) {
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        theta[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

std::vector<double> one_hot(int k, int n_classes) {
    if (k < 0 || k >= n_classes) throw std::out_of_range("one_hot: class out of range");
    std::vector<double> v(static_cast<std::size_t>(n_classes), 0.0);
    v[static_cast<std::size_t>(k)] = 1.0;
    return v;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = Rng::stream(seed, epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

DenseNet make_cond_mean_net(int n_classes, std::uint64_t seed) {
    return DenseNet({static_cast<std::size_t>(n_classes), 128, 64, 2},
                    {Activation::Sigmoid, Activation::Sigmoid, Activation::Identity}, seed);
}

double cond_mean_mse(const DenseNet& f_net, const std::vector<LabeledSample>& samples,
                     int n_classes) {
    if (samples.empty()) return 0.0;
    // Only n_classes distinct inputs, so evaluate each once.
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_classes));
    for (int k = 0; k < n_classes; ++k) out[static_cast<std::size_t>(k)] = forward(f_net, one_hot(k, n_classes));
    double s = 0.0;
    for (const auto& smp : samples) {
        const auto& o = out[static_cast<std::size_t>(smp.x)];
        const double d0 = o[0] - smp.y0[0], d1 = o[1] - smp.y0[1];
        s += d0 * d0 + d1 * d1;
    }
    return s / static_cast<double>(samples.size());
}

PretrainResult pretrain_cond_mean(const std::vector<LabeledSample>& samples, int n_classes,
                                  const PretrainOptions& opt) {
    if (samples.empty()) throw std::invalid_argument("pretrain_cond_mean: no samples");
    if (opt.batch == 0) throw std::invalid_argument("pretrain_cond_mean: batch must be >= 1");
    PretrainResult res{make_cond_mean_net(n_classes, opt.seed), {}, 0.0};
    DenseNet& net = res.net;
    AdamState adam(net, opt.lr);
    Gradients acc;
    ForwardCache cache;
    const std::size_t n = samples.size();
    for (std::size_t ep = 0; ep < opt.epochs; ++ep) {
        const auto order = epoch_permutation(n, opt.seed ^ 0x5eedULL, ep);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += opt.batch) {
            const std::size_t stop = std::min(n, start + opt.batch);
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            acc.reset(net);
            for (std::size_t k = start; k < stop; ++k) {
                const auto& s = samples[order[k]];
                const auto in = one_hot(s.x, n_classes);
                const auto out = forward(net, in, &cache);
                const double r0 = out[0] - s.y0[0], r1 = out[1] - s.y0[1];
                epoch_loss += r0 * r0 + r1 * r1;
                const double g[2] = {2.0 * r0 * inv_b, 2.0 * r1 * inv_b};
                backward_accumulate(net, cache, g, acc);
            }
            adam_step(net, adam, acc.params);
        }
        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss))
            throw DivergenceError("pretrain_cond_mean: non-finite loss at epoch " + std::to_string(ep + 1));
        res.mse.push_back(epoch_loss);
        if (opt.on_epoch) opt.on_epoch(ep + 1, net, epoch_loss);
    }
    res.final_mse = cond_mean_mse(net, samples, n_classes);
    return res;
}

}  // namespace cardlab
