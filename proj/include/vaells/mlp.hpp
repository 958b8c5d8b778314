#pragma once

// Small fully-connected networks with hand-written forward/backward passes
// and an Adam optimizer. The training loop owns all parameter mutation;
// forward and backward are pure.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vaells/common.hpp"
#include "vaells/linalg.hpp"

namespace vaells {

enum class Activation { relu, identity, sigmoid };

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    if (s == "sigmoid") return Activation::sigmoid;
    throw config_error("unknown activation: " + s);
}

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        default: return "identity";
    }
}

struct MlpSpec {
    std::vector<std::size_t> layer_sizes;   // input first
    std::vector<Activation> activations;    // one per non-input layer

    std::size_t num_layers() const { return activations.size(); }
};

inline void validate(const MlpSpec& spec) {
    if (spec.layer_sizes.size() < 2)
        throw config_error("mlp spec needs at least input and output sizes");
    if (spec.activations.size() + 1 != spec.layer_sizes.size())
        throw config_error("mlp spec needs one activation per non-input layer");
    for (std::size_t n : spec.layer_sizes)
        if (n == 0) throw config_error("mlp spec has an empty layer");
    if (spec.activations.back() == Activation::relu)
        throw config_error("final mlp layer must be identity or sigmoid");
}

struct MlpParams {
    MlpSpec spec;
    std::vector<Mat> weights;  // layer l: (sizes[l+1] x sizes[l])
    std::vector<Vec> biases;
};

inline std::size_t param_count(const MlpParams& p) {
    std::size_t n = 0;
    for (std::size_t l = 0; l < p.weights.size(); ++l)
        n += p.weights[l].count() + p.biases[l].size();
    return n;
}

// Glorot-uniform weights, zero biases. Draw order: layers ascending, weight
// entries row-major; biases consume no randomness.
inline MlpParams init_mlp(const MlpSpec& spec, Rng& rng) {
    validate(spec);
    MlpParams p;
    p.spec = spec;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const std::size_t fan_in = spec.layer_sizes[l];
        const std::size_t fan_out = spec.layer_sizes[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Mat w(fan_out, fan_in);
        for (std::size_t i = 0; i < w.count(); ++i)
            w.data()[i] = rng.uniform(-bound, bound);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(fan_out);
    }
    return p;
}

struct MlpCache {
    Vec input;
    std::vector<Vec> pre;   // pre-activation per layer
    std::vector<Vec> post;  // activated output per layer
};

namespace detail {

inline double activate(Activation a, double x) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        default: return x;
    }
}

// Derivative in terms of pre-activation x and activated value y.
inline double activate_grad(Activation a, double x, double y) {
    switch (a) {
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
        case Activation::sigmoid: return y * (1.0 - y);
        default: return 1.0;
    }
}

}  // namespace detail

inline std::pair<Vec, MlpCache> mlp_forward(const MlpParams& p, const Vec& x) {
    if (x.size() != p.spec.layer_sizes.front())
        throw dim_error("mlp_forward: input dimension mismatch");
    MlpCache cache;
    cache.input = x;
    Vec h = x;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        Vec pre = matvec(p.weights[l], h);
        pre += p.biases[l];
        Vec post(pre.size());
        const Activation a = p.spec.activations[l];
        for (std::size_t i = 0; i < pre.size(); ++i)
            post[i] = detail::activate(a, pre[i]);
        cache.pre.push_back(pre);
        cache.post.push_back(post);
        h = std::move(post);
    }
    return {h, std::move(cache)};
}

struct MlpGrads {
    std::vector<Mat> weights;
    std::vector<Vec> biases;
    Vec input;

    MlpGrads& operator+=(const MlpGrads& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] += o.weights[l];
            biases[l] += o.biases[l];
        }
        input += o.input;
        return *this;
    }
    MlpGrads& operator*=(double s) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] *= s;
            biases[l] *= s;
        }
        input *= s;
        return *this;
    }
};

inline MlpGrads make_grads_like(const MlpParams& p) {
    MlpGrads g;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        g.weights.emplace_back(p.weights[l].rows(), p.weights[l].cols());
        g.biases.emplace_back(p.biases[l].size());
    }
    g.input = Vec(p.spec.layer_sizes.front());
    return g;
}

// Gradients of the scalar whose output-gradient is supplied, with respect to
// every parameter and the network input.
inline MlpGrads mlp_backward(const MlpParams& p, const MlpCache& cache,
                             const Vec& output_grad) {
    const std::size_t num_layers = p.weights.size();
    if (cache.pre.size() != num_layers || cache.input.size() != p.spec.layer_sizes.front())
        throw dim_error("mlp_backward: cache does not match network");
    if (output_grad.size() != p.spec.layer_sizes.back())
        throw dim_error("mlp_backward: output gradient dimension mismatch");

    MlpGrads g = make_grads_like(p);
    Vec delta = output_grad;
    for (std::size_t l = num_layers; l-- > 0;) {
        const Activation a = p.spec.activations[l];
        for (std::size_t i = 0; i < delta.size(); ++i)
            delta[i] *= detail::activate_grad(a, cache.pre[l][i], cache.post[l][i]);
        const Vec& below = l == 0 ? cache.input : cache.post[l - 1];
        g.weights[l] += outer(delta, below);
        g.biases[l] += delta;
        delta = matvec_t(p.weights[l], delta);
    }
    g.input = std::move(delta);
    return g;
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<double> m, v;
};

inline AdamState make_adam_state(std::size_t count, double beta1 = 0.9,
                                 double beta2 = 0.999, double epsilon = 1e-8) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.epsilon = epsilon;
    st.m.assign(count, 0.0);
    st.v.assign(count, 0.0);
    return st;
}

namespace detail {

// Elementwise Adam over one block of a flat state; offset tracks position.
inline void adam_block(std::span<double> param, std::span<const double> grad,
                       AdamState& st, std::size_t offset, double lr) {
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double& m = st.m[offset + i];
        double& v = st.v[offset + i];
        m = st.beta1 * m + (1.0 - st.beta1) * grad[i];
        v = st.beta2 * v + (1.0 - st.beta2) * grad[i] * grad[i];
        param[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + st.epsilon);
    }
}

}  // namespace detail

// One Adam step over a flat parameter vector.
inline void adam_step(std::span<double> param, std::span<const double> grad,
                      AdamState& st, double lr) {
    if (param.size() != grad.size() || st.m.size() != param.size())
        throw dim_error("adam_step: size mismatch");
    ++st.step;
    detail::adam_block(param, grad, st, 0, lr);
}

// One Adam step over a whole network. State layout: per layer, weights
// row-major then bias, layers ascending; the counter advances once per call.
inline void adam_step(MlpParams& p, const MlpGrads& g, AdamState& st, double lr) {
    if (st.m.size() != param_count(p) || g.weights.size() != p.weights.size())
        throw dim_error("adam_step: state does not match network");
    ++st.step;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        Mat& w = p.weights[l];
        if (g.weights[l].count() != w.count() || g.biases[l].size() != p.biases[l].size())
            throw dim_error("adam_step: gradient shape mismatch");
        detail::adam_block({w.data(), w.count()},
                           {g.weights[l].data(), g.weights[l].count()}, st, offset, lr);
        offset += w.count();
        detail::adam_block({p.biases[l].data(), p.biases[l].size()},
                           {g.biases[l].data(), g.biases[l].size()}, st, offset, lr);
        offset += p.biases[l].size();
    }
}

}  // namespace vaells
