#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cardlab/nn.hpp"
#include "cardlab/rng.hpp"
#include "cardlab/transport.hpp"

// Independent re-implementations used as test oracles. Deliberately naive.
namespace oracle {

inline double act(cardlab::Activation a, double z) {
    switch (a) {
        case cardlab::Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case cardlab::Activation::Softplus: return std::log(1.0 + std::exp(z));
        case cardlab::Activation::Identity: return z;
    }
    return z;
}

// Plain matrix-vector loop over the layer shapes, reading raw parameters.
inline std::vector<double> forward(const cardlab::DenseNet& net, const std::vector<double>& x) {
    std::vector<double> h = x;
    const auto p = net.params();
    for (const auto& L : net.shapes()) {
        std::vector<double> out(L.out);
        for (std::size_t o = 0; o < L.out; ++o) {
            double z = p[L.offset + L.in * L.out + o];
            for (std::size_t i = 0; i < L.in; ++i) z += p[L.offset + o * L.in + i] * h[i];
            out[o] = act(L.act, z);
        }
        h = std::move(out);
    }
    return h;
}

// Loss = 0.5 * ||out - target||^2.
inline double half_sq_loss(const cardlab::DenseNet& net, const std::vector<double>& x,
                           const std::vector<double>& target) {
    auto y = forward(net, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
    return s;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences (step h) on every parameter and every input entry.
// Relative error uses max(|a|, |fd|, floor) as scale.
inline GradCheck check_gradients(const cardlab::DenseNet& net, const std::vector<double>& x,
                                 const std::vector<double>& target, double h = 1e-5,
                                 double floor = 1e-4) {
    cardlab::ForwardCache cache;
    auto y = cardlab::forward(net, x, &cache);
    std::vector<double> g(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] - target[i];
    auto grads = cardlab::backward(net, cache, g);

    GradCheck res;
    cardlab::DenseNet probe = net;
    std::vector<double> theta(net.params().begin(), net.params().end());
    auto rel = [&](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
    };
    for (std::size_t k = 0; k < theta.size(); ++k) {
        auto t = theta;
        t[k] = theta[k] + h;
        probe.set_params(t);
        const double lp = half_sq_loss(probe, x, target);
        t[k] = theta[k] - h;
        probe.set_params(t);
        const double lm = half_sq_loss(probe, x, target);
        res.max_rel = std::max(res.max_rel, rel(grads.params[k], (lp - lm) / (2.0 * h)));
        ++res.checked;
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
        auto xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        const double fd = (half_sq_loss(net, xp, target) - half_sq_loss(net, xm, target)) / (2.0 * h);
        res.max_rel = std::max(res.max_rel, rel(grads.input[k], fd));
        ++res.checked;
    }
    return res;
}

// Random small net with mixed activations; widths in [1, 6].
inline cardlab::DenseNet random_net(cardlab::Rng& rng) {
    const std::size_t depth = 1 + rng.below(3);
    std::vector<std::size_t> dims{1 + rng.below(5)};
    std::vector<cardlab::Activation> acts;
    for (std::size_t l = 0; l < depth; ++l) {
        dims.push_back(1 + rng.below(6));
        acts.push_back(static_cast<cardlab::Activation>(rng.below(3)));
    }
    return cardlab::DenseNet(dims, acts, rng.next_u64());
}

// Exhaustive W2 over all permutations via std::next_permutation.
inline double w2_all_permutations(const cardlab::EmpiricalMeasure& A,
                                  const cardlab::EmpiricalMeasure& B) {
    std::vector<std::size_t> perm(A.n());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = INFINITY;
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i)
            for (std::size_t k = 0; k < A.d; ++k) {
                const double d = A.row(i)[k] - B.row(perm[i])[k];
                c += d * d;
            }
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(A.n()));
}

inline cardlab::EmpiricalMeasure random_cloud(std::size_t n, std::size_t d, cardlab::Rng& rng,
                                              double scale = 1.0, double shift = 0.0) {
    std::vector<double> pts(n * d);
    for (auto& v : pts) v = shift + scale * rng.normal();
    return cardlab::EmpiricalMeasure(d, std::move(pts));
}

}  // namespace oracle
