#pragma once

// The probabilistic model and trainer: posterior sampling through transport
// operators, the anchor-based prior, the full training objective with
// gradients for every parameter group, the accept/reject dictionary step,
// and the training loop with warm-up, alternating, and simultaneous modes.
//
// Coefficient vectors inferred for objective terms are treated as constants
// under differentiation (the inference is a separate inner problem), and all
// randomness flows through explicit draw structures so an objective can be
// re-evaluated with frozen noise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vaells/common.hpp"
#include "vaells/csv.hpp"
#include "vaells/datasets.hpp"
#include "vaells/linalg.hpp"
#include "vaells/mlp.hpp"
#include "vaells/transport.hpp"

namespace vaells {

struct Hyperparameters {
    std::size_t latent_dim = 2;
    std::size_t data_dim = 20;
    std::size_t num_operators = 1;
    std::size_t anchors_per_class = 4;
    std::size_t samples_per_point = 1;
    std::size_t hidden_width = 512;
    bool sigmoid_output = false;

    double zeta1 = 0.01;   // reconstruction weight, 1/(2 sigma^2)
    double zeta2 = 1.0;    // posterior fidelity weight
    double zeta3 = 1.0;    // posterior sparsity weight
    double zeta4 = 1.0;    // prior fidelity weight
    double zeta5 = 0.01;   // prior sparsity weight
    double zeta_q = 1e-6;  // sparsity weight for posterior coefficient inference
    double zeta_p = 5e-5;  // sparsity weight for prior coefficient inference
    double eta = 0.01;     // dictionary Frobenius regularizer

    double gamma_post = 0.001;  // Gaussian noise scale in latent sampling
    double laplace_scale = 1.0; // b of the coefficient prior

    double lr_net = 1e-4;
    double lr_anchor = 1e-4;
    double lr_psi_start = 5e-5;
    double lr_psi_max = 0.05;
    double lr_decay = 1.1;

    std::size_t batch_size = 30;
    long train_steps = 3000;
    long warmup_steps = 0;
    long net_update_steps = 20;  // both phase lengths 0 selects simultaneous updates
    long psi_update_steps = 20;
    double prior_weight_during_net_steps = 0.01;
    double recon_weight_during_psi_steps = 0.001;

    double latent_scale = 1.0;
    bool closest_anchor_only = true;
    int num_restarts = 2;

    int infer_max_iterations = 300;
    double infer_tolerance = 1e-6;
    double infer_init_low = -0.1;
    double infer_init_high = 0.1;
    double psi_init_scale = 0.1;
};

inline void validate(const Hyperparameters& hp) {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0)) throw config_error(std::string("negative weight: ") + name);
    };
    nonneg(hp.zeta1, "zeta1"); nonneg(hp.zeta2, "zeta2"); nonneg(hp.zeta3, "zeta3");
    nonneg(hp.zeta4, "zeta4"); nonneg(hp.zeta5, "zeta5"); nonneg(hp.zeta_q, "zeta_q");
    nonneg(hp.zeta_p, "zeta_p"); nonneg(hp.eta, "eta"); nonneg(hp.gamma_post, "gamma_post");
    if (hp.num_operators < 1 || hp.anchors_per_class < 1 || hp.samples_per_point < 1 ||
        hp.batch_size < 1)
        throw config_error("num_operators, anchors_per_class, samples_per_point, "
                           "batch_size must all be at least 1");
    if (hp.latent_dim < 1 || hp.data_dim < 1 || hp.hidden_width < 1)
        throw config_error("model dimensions must be positive");
    if (!(hp.lr_psi_start <= hp.lr_psi_max))
        throw config_error("lr_psi_start must not exceed lr_psi_max");
    if (!(hp.latent_scale > 0.0)) throw config_error("latent_scale must be positive");
    if (!(hp.laplace_scale > 0.0)) throw config_error("laplace_scale must be positive");
    if (!(hp.lr_decay >= 1.0)) throw config_error("lr_decay must be at least 1");
    if (hp.num_restarts < 1) throw config_error("num_restarts must be at least 1");
    if (hp.train_steps < 0 || hp.warmup_steps < 0 || hp.net_update_steps < 0 ||
        hp.psi_update_steps < 0)
        throw config_error("step counts must be non-negative");
    if ((hp.net_update_steps == 0) != (hp.psi_update_steps == 0))
        throw config_error("phase step counts must both be positive (alternating) "
                           "or both zero (simultaneous)");
}

// Multipliers on the three objective-term groups, varied per training phase.
struct PhaseWeights {
    double recon = 1.0;
    double posterior = 1.0;
    double prior = 1.0;
};

struct ModelState {
    MlpParams encoder, decoder;
    TransportDictionary dictionary;
    AnchorSet anchors;
    AdamState enc_adam, dec_adam, anchor_adam;
};

// Initialization order: encoder, decoder, dictionary. Anchors are supplied.
inline ModelState init_model(const Hyperparameters& hp, AnchorSet anchors, Rng& rng) {
    validate(hp);
    ModelState model;
    MlpSpec enc_spec{{hp.data_dim, hp.hidden_width, hp.latent_dim},
                     {Activation::relu, Activation::identity}};
    MlpSpec dec_spec{{hp.latent_dim, hp.hidden_width, hp.data_dim},
                     {Activation::relu,
                      hp.sigmoid_output ? Activation::sigmoid : Activation::identity}};
    model.encoder = init_mlp(enc_spec, rng);
    model.decoder = init_mlp(dec_spec, rng);
    model.dictionary =
        make_dictionary(hp.latent_dim, hp.num_operators, hp.psi_init_scale, rng);
    model.anchors = std::move(anchors);
    for (const Vec& a : model.anchors.anchors)
        if (a.size() != hp.data_dim)
            throw config_error("anchor dimension does not match data_dim");
    model.enc_adam = make_adam_state(param_count(model.encoder));
    model.dec_adam = make_adam_state(param_count(model.decoder));
    model.anchor_adam =
        make_adam_state(model.anchors.size() * hp.data_dim);
    return model;
}

// Inverse-CDF map from uniform variates on (-1/2, 1/2) to Laplace(0, b).
inline Vec laplace_inverse_transform(const Vec& u, double b) {
    if (!(b > 0.0)) throw config_error("laplace scale must be positive");
    Vec c(u.size());
    for (std::size_t m = 0; m < u.size(); ++m) {
        if (!(std::abs(u[m]) < 0.5))
            throw numeric_error("laplace_inverse_transform: u outside (-1/2, 1/2)");
        const double sign = u[m] > 0.0 ? 1.0 : (u[m] < 0.0 ? -1.0 : 0.0);
        c[m] = -b * sign * std::log(1.0 - 2.0 * std::abs(u[m]));
    }
    return c;
}

inline Vec encode(const ModelState& model, const Vec& x) {
    return mlp_forward(model.encoder, x).first;
}

inline Vec decode(const ModelState& model, const Vec& z) {
    return mlp_forward(model.decoder, z).first;
}

struct PosteriorSample {
    Vec z;
    Vec c_hat;
    Vec eps;
};

// One reparameterized draw: c from uniform noise through the Laplace inverse
// CDF, z from the transported encoding plus Gaussian noise. Transport runs
// on latent_scale-scaled coordinates; the scale divides back out afterward.
// Draw order: M uniforms, then latent_dim normals.
inline PosteriorSample sample_posterior(const ModelState& model, const Vec& x,
                                        const Hyperparameters& hp, Rng& rng) {
    Vec u(hp.num_operators);
    for (std::size_t m = 0; m < u.size(); ++m) u[m] = rng.uniform_open() - 0.5;
    PosteriorSample out;
    out.c_hat = laplace_inverse_transform(u, hp.laplace_scale);
    out.eps = Vec(hp.latent_dim);
    for (std::size_t i = 0; i < out.eps.size(); ++i) out.eps[i] = rng.normal();

    Vec mu = encode(model, x);
    Vec mu_scaled = hp.latent_scale * mu;
    Vec z_scaled = matvec(transform(model.dictionary, out.c_hat), mu_scaled);
    for (std::size_t i = 0; i < z_scaled.size(); ++i)
        z_scaled[i] += hp.gamma_post * out.eps[i];
    out.z = (1.0 / hp.latent_scale) * z_scaled;
    return out;
}

// Negative log-likelihood of x given z: C1 + zeta1*||x - g(z)||^2 with
// C1 = (D/2) ln(2 pi) + D ln sigma, sigma = (2 zeta1)^(-1/2).
inline double log_likelihood_term(const ModelState& model, const Vec& x, const Vec& z,
                                  double zeta1) {
    if (!(zeta1 > 0.0)) throw config_error("zeta1 must be positive here");
    const double dim = static_cast<double>(x.size());
    const double sigma = 1.0 / std::sqrt(2.0 * zeta1);
    const double c1 = 0.5 * dim * std::log(2.0 * M_PI) + dim * std::log(sigma);
    Vec r = x - decode(model, z);
    return c1 + zeta1 * norm2_sq(r);
}

// C2 of the variational posterior density.
inline double posterior_log_constant(std::size_t latent_dim, double gamma,
                                     std::size_t num_operators, double b) {
    if (!(gamma > 0.0) || !(b > 0.0))
        throw config_error("posterior constant needs positive gamma and b");
    return -0.5 * static_cast<double>(latent_dim) * std::log(2.0 * M_PI) -
           static_cast<double>(latent_dim) * std::log(gamma) +
           static_cast<double>(num_operators) * std::log(1.0 / (2.0 * b));
}

namespace detail {

inline InferenceSettings inference_settings(const Hyperparameters& hp,
                                            double sparsity_weight,
                                            double fidelity_weight) {
    InferenceSettings s;
    s.sparsity_weight = sparsity_weight;
    s.fidelity_weight = fidelity_weight;
    s.max_iterations = hp.infer_max_iterations;
    s.gradient_tolerance = hp.infer_tolerance;
    s.num_restarts = hp.num_restarts;
    s.init_low = hp.infer_init_low;
    s.init_high = hp.infer_init_high;
    return s;
}

}  // namespace detail

struct PosteriorLogDensity {
    double value = 0.0;
    Vec c_star;
};

// log q(z | x) at the max-approximation coefficients, constants included.
inline PosteriorLogDensity log_variational_posterior(const ModelState& model,
                                                     const Vec& z, const Vec& x,
                                                     const Hyperparameters& hp,
                                                     Rng& rng) {
    const double s = hp.latent_scale;
    Vec mu_scaled = s * encode(model, x);
    Vec z_scaled = s * z;
    auto res = infer_coefficients(
        model.dictionary, z_scaled, mu_scaled,
        detail::inference_settings(hp, hp.zeta_q, hp.zeta2), rng);
    Vec r = z_scaled - matvec(transform(model.dictionary, res.coeffs), mu_scaled);
    double sp = 0.0;
    for (std::size_t m = 0; m < res.coeffs.size(); ++m) sp += std::abs(res.coeffs[m]);
    PosteriorLogDensity out;
    out.value = posterior_log_constant(hp.latent_dim, hp.gamma_post, hp.num_operators,
                                       hp.laplace_scale) -
                hp.zeta2 * norm2_sq(r) - hp.zeta3 * sp;
    out.c_star = std::move(res.coeffs);
    return out;
}

// log p(z) for a class: either the density at the closest anchor (by the
// zeta4/zeta5-weighted inference objective) or -ln Na + logsumexp over
// anchors, constants included. Every anchor's inference replays the same
// restart draws, so the result does not depend on anchor order.
inline double log_prior(const ModelState& model, const Vec& z, int class_label,
                        const Hyperparameters& hp, Rng& rng) {
    const double s = hp.latent_scale;
    Vec z_scaled = s * z;
    const Rng shared(rng.u64());
    std::vector<double> exponents;
    for (std::size_t i = 0; i < model.anchors.size(); ++i) {
        if (model.anchors.labels[i] != class_label) continue;
        Vec anchor_scaled = s * encode(model, model.anchors.anchors[i]);
        Rng per_anchor = shared;
        auto res = infer_coefficients(
            model.dictionary, z_scaled, anchor_scaled,
            detail::inference_settings(hp, hp.zeta_p, hp.zeta2), per_anchor);
        Vec r = z_scaled -
                matvec(transform(model.dictionary, res.coeffs), anchor_scaled);
        double sp = 0.0;
        for (std::size_t m = 0; m < res.coeffs.size(); ++m)
            sp += std::abs(res.coeffs[m]);
        exponents.push_back(-hp.zeta4 * norm2_sq(r) - hp.zeta5 * sp);
    }
    if (exponents.empty())
        throw config_error("log_prior: no anchors for class " +
                           std::to_string(class_label));
    const double c2 = posterior_log_constant(hp.latent_dim, hp.gamma_post,
                                             hp.num_operators, hp.laplace_scale);
    if (hp.closest_anchor_only)
        return c2 + *std::max_element(exponents.begin(), exponents.end());
    return c2 - std::log(static_cast<double>(exponents.size())) +
           logsumexp(std::span<const double>(exponents.data(), exponents.size()));
}

struct Batch {
    std::vector<Vec> inputs;
    std::vector<int> labels;

    std::size_t size() const { return inputs.size(); }
};

struct DrawNoise {
    Vec u;    // uniform variates on (-1/2, 1/2), one per operator
    Vec eps;  // standard normals, one per latent dimension
};

using BatchNoise = std::vector<std::vector<DrawNoise>>;  // [point][draw]

// Draw order: batch points in order, draws per point in order; within a draw
// the M uniforms come before the latent_dim normals.
inline BatchNoise draw_noise(const Hyperparameters& hp, std::size_t batch_size,
                             Rng& rng) {
    BatchNoise noise(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        noise[b].resize(hp.samples_per_point);
        for (std::size_t j = 0; j < hp.samples_per_point; ++j) {
            DrawNoise& dn = noise[b][j];
            dn.u = Vec(hp.num_operators);
            for (std::size_t m = 0; m < dn.u.size(); ++m)
                dn.u[m] = rng.uniform_open() - 0.5;
            dn.eps = Vec(hp.latent_dim);
            for (std::size_t i = 0; i < dn.eps.size(); ++i) dn.eps[i] = rng.normal();
        }
    }
    return noise;
}

struct DrawCoeffs {
    Vec c_post;                               // empty when posterior weight is 0
    std::vector<Vec> c_prior;                 // per same-class anchor
    std::vector<std::size_t> anchor_indices;  // global anchor ids, same order
    std::size_t closest = 0;                  // position in c_prior
};

struct BatchCoeffs {
    std::vector<std::vector<DrawCoeffs>> per_point;  // [point][draw]
    long total_iterations = 0;
    long max_iterations = 0;
    long num_calls = 0;
};

namespace detail {

inline Vec scaled_sample(const TransportDictionary& dict, const Vec& c_hat,
                         const Vec& mu_scaled, const Vec& eps, double gamma) {
    Vec z = matvec(mat_exp(weighted_generator(dict, c_hat)), mu_scaled);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += gamma * eps[i];
    return z;
}

}  // namespace detail

// Coefficient inference for a whole batch evaluation. Each inference call k
// (counted over points, draws, posterior-then-anchors in order) uses the
// child stream fork(k) of eval_seed, so a re-run with the same seed, noise,
// and batch reproduces the restart initializations exactly even when the
// dictionary has changed. Zero-weight term groups are skipped entirely.
inline BatchCoeffs infer_batch(const ModelState& model, const Batch& batch,
                               const Hyperparameters& hp, const BatchNoise& noise,
                               uint64_t eval_seed, const PhaseWeights& weights) {
    const double s = hp.latent_scale;
    BatchCoeffs out;
    out.per_point.resize(batch.size());
    const Rng base(eval_seed);
    uint64_t call_index = 0;

    // Encoded anchors, computed lazily per class appearance.
    std::vector<Vec> anchor_scaled(model.anchors.size());
    std::vector<bool> anchor_ready(model.anchors.size(), false);

    for (std::size_t b = 0; b < batch.size(); ++b) {
        Vec mu_scaled = s * encode(model, batch.inputs[b]);
        out.per_point[b].resize(hp.samples_per_point);
        for (std::size_t j = 0; j < hp.samples_per_point; ++j) {
            DrawCoeffs& dc = out.per_point[b][j];
            const Vec c_hat = laplace_inverse_transform(noise[b][j].u, hp.laplace_scale);
            const Vec z_scaled = detail::scaled_sample(
                model.dictionary, c_hat, mu_scaled, noise[b][j].eps, hp.gamma_post);

            if (weights.posterior != 0.0) {
                Rng child = base.fork(call_index++);
                auto res = infer_coefficients(
                    model.dictionary, z_scaled, mu_scaled,
                    detail::inference_settings(hp, hp.zeta_q, hp.zeta2), child);
                dc.c_post = std::move(res.coeffs);
                out.total_iterations += res.iterations;
                out.max_iterations = std::max(out.max_iterations,
                                              static_cast<long>(res.iterations));
                ++out.num_calls;
            }
            if (weights.prior != 0.0) {
                double best_score = 0.0;
                for (std::size_t i = 0; i < model.anchors.size(); ++i) {
                    if (model.anchors.labels[i] != batch.labels[b]) continue;
                    if (!anchor_ready[i]) {
                        anchor_scaled[i] = s * encode(model, model.anchors.anchors[i]);
                        anchor_ready[i] = true;
                    }
                    Rng child = base.fork(call_index++);
                    auto res = infer_coefficients(
                        model.dictionary, z_scaled, anchor_scaled[i],
                        detail::inference_settings(hp, hp.zeta_p, hp.zeta2), child);
                    out.total_iterations += res.iterations;
                    out.max_iterations = std::max(out.max_iterations,
                                                  static_cast<long>(res.iterations));
                    ++out.num_calls;

                    Vec r = z_scaled -
                            matvec(transform(model.dictionary, res.coeffs),
                                   anchor_scaled[i]);
                    double sp = 0.0;
                    for (std::size_t m = 0; m < res.coeffs.size(); ++m)
                        sp += std::abs(res.coeffs[m]);
                    const double score = hp.zeta4 * norm2_sq(r) + hp.zeta5 * sp;
                    dc.c_prior.push_back(std::move(res.coeffs));
                    dc.anchor_indices.push_back(i);
                    if (dc.c_prior.size() == 1 || score < best_score) {
                        best_score = score;
                        dc.closest = dc.c_prior.size() - 1;
                    }
                }
                if (dc.c_prior.empty())
                    throw config_error("no anchors for class " +
                                       std::to_string(batch.labels[b]));
            }
        }
    }
    return out;
}

struct ObjectiveTerms {
    double value = 0.0;      // phase-weighted objective, Frobenius included
    double recon = 0.0;      // weighted zeta1 reconstruction term
    double post_fid = 0.0;   // weighted -zeta2 posterior fidelity
    double post_sp = 0.0;    // weighted -zeta3 posterior sparsity
    double prior = 0.0;      // weighted negative prior log-density (no constants)
    double frob = 0.0;       // (eta/2) sum of squared Frobenius norms
    double transopt = 0.0;   // unweighted dictionary-dependent portion
};

struct ModelGrads {
    MlpGrads encoder, decoder;
    std::vector<Mat> psi;
    std::vector<Vec> anchors;
};

struct ObjectiveResult {
    ObjectiveTerms terms;
    ModelGrads grads;  // populated only when gradients were requested
};

// Evaluates the phase-weighted objective at frozen noise and frozen inferred
// coefficients, optionally assembling gradients for the encoder, decoder,
// anchors, and dictionary. The value/gradient pair treats the coefficients
// (and the closest-anchor choice) as constants.
inline ObjectiveResult objective_terms(const ModelState& model, const Batch& batch,
                                       const Hyperparameters& hp,
                                       const BatchNoise& noise,
                                       const BatchCoeffs& coeffs,
                                       const PhaseWeights& weights,
                                       bool want_grads) {
    if (batch.size() == 0) throw dim_error("objective_terms: empty batch");
    const double s = hp.latent_scale;
    const double q = 1.0 / (static_cast<double>(batch.size()) *
                            static_cast<double>(hp.samples_per_point));
    ObjectiveResult out;
    ModelGrads& g = out.grads;
    if (want_grads) {
        g.encoder = make_grads_like(model.encoder);
        g.decoder = make_grads_like(model.decoder);
        for (const Mat& psi : model.dictionary.operators)
            g.psi.emplace_back(psi.rows(), psi.cols());
        g.anchors.assign(model.anchors.size(), Vec(hp.data_dim));
    }

    // Encoded anchors with caches, filled lazily; per-anchor output-space
    // gradient accumulators so each anchor needs only one backward pass.
    std::vector<Vec> anchor_scaled(model.anchors.size());
    std::vector<MlpCache> anchor_cache(model.anchors.size());
    std::vector<bool> anchor_ready(model.anchors.size(), false);
    std::vector<Vec> anchor_out_grad(model.anchors.size());
    std::vector<bool> anchor_touched(model.anchors.size(), false);

    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto [mu, enc_cache] = mlp_forward(model.encoder, batch.inputs[b]);
        Vec mu_scaled = s * mu;
        Vec mu_out_grad(hp.latent_dim);  // accumulated d/d mu over draws
        bool mu_needed = false;

        for (std::size_t j = 0; j < hp.samples_per_point; ++j) {
            static const DrawCoeffs no_coeffs;
            const DrawCoeffs& dc =
                coeffs.per_point.empty() ? no_coeffs : coeffs.per_point[b][j];
            const Vec c_hat = laplace_inverse_transform(noise[b][j].u, hp.laplace_scale);
            const Mat gen_hat = weighted_generator(model.dictionary, c_hat);
            const Mat t_hat = mat_exp(gen_hat);
            Vec z_scaled = matvec(t_hat, mu_scaled);
            for (std::size_t i = 0; i < z_scaled.size(); ++i)
                z_scaled[i] += hp.gamma_post * noise[b][j].eps[i];
            Vec z = (1.0 / s) * z_scaled;

            Vec z_grad_scaled(hp.latent_dim);  // total d/d z_scaled
            bool z_grad_needed = false;

            if (weights.recon != 0.0) {
                auto [xhat, dec_cache] = mlp_forward(model.decoder, z);
                Vec r = batch.inputs[b] - xhat;
                out.terms.recon += q * weights.recon * hp.zeta1 * norm2_sq(r);
                if (want_grads) {
                    Vec out_grad = (-2.0 * q * weights.recon * hp.zeta1) * r;
                    MlpGrads dg = mlp_backward(model.decoder, dec_cache, out_grad);
                    Vec dz = dg.input;
                    g.decoder += dg;
                    for (std::size_t i = 0; i < hp.latent_dim; ++i)
                        z_grad_scaled[i] += dz[i] / s;
                    z_grad_needed = true;
                }
            }

            if (weights.posterior != 0.0) {
                const Mat a_q = weighted_generator(model.dictionary, dc.c_post);
                const Mat t_q = mat_exp(a_q);
                Vec r_q = z_scaled - matvec(t_q, mu_scaled);
                double sp = 0.0;
                for (std::size_t m = 0; m < dc.c_post.size(); ++m)
                    sp += std::abs(dc.c_post[m]);
                const double fid = norm2_sq(r_q);
                out.terms.post_fid -= q * weights.posterior * hp.zeta2 * fid;
                out.terms.post_sp -= q * weights.posterior * hp.zeta3 * sp;
                out.terms.transopt += q * (-hp.zeta2 * fid - hp.zeta3 * sp);
                if (want_grads) {
                    const double w = -2.0 * q * weights.posterior * hp.zeta2;
                    // d/d z_scaled of -zeta2 ||r_q||^2 is -2 zeta2 r_q.
                    for (std::size_t i = 0; i < hp.latent_dim; ++i)
                        z_grad_scaled[i] += w * r_q[i];
                    z_grad_needed = true;
                    auto [tq_t, k_q] =
                        mat_exp_frechet(transpose(a_q), outer(r_q, mu_scaled));
                    // d/d mu_scaled: +2 zeta2 T_q^T r_q (and through z below).
                    Vec tr = matvec(tq_t, r_q);
                    for (std::size_t i = 0; i < hp.latent_dim; ++i)
                        mu_out_grad[i] += -w * tr[i];
                    mu_needed = true;
                    for (std::size_t m = 0; m < g.psi.size(); ++m) {
                        const double fac = -w * dc.c_post[m];
                        for (std::size_t e = 0; e < k_q.count(); ++e)
                            g.psi[m].data()[e] += fac * k_q.data()[e];
                    }
                }
            }

            if (weights.prior != 0.0) {
                const std::size_t na = dc.c_prior.size();
                std::vector<double> exponents(na);
                std::vector<Mat> a_i(na), t_i(na);
                std::vector<Vec> r_i(na);
                for (std::size_t k = 0; k < na; ++k) {
                    const std::size_t ai = dc.anchor_indices[k];
                    if (!anchor_ready[ai]) {
                        auto [enc_a, cache_a] =
                            mlp_forward(model.encoder, model.anchors.anchors[ai]);
                        anchor_scaled[ai] = s * enc_a;
                        anchor_cache[ai] = std::move(cache_a);
                        anchor_ready[ai] = true;
                    }
                    a_i[k] = weighted_generator(model.dictionary, dc.c_prior[k]);
                    t_i[k] = mat_exp(a_i[k]);
                    r_i[k] = z_scaled - matvec(t_i[k], anchor_scaled[ai]);
                    double sp = 0.0;
                    for (std::size_t m = 0; m < dc.c_prior[k].size(); ++m)
                        sp += std::abs(dc.c_prior[k][m]);
                    exponents[k] = -hp.zeta4 * norm2_sq(r_i[k]) - hp.zeta5 * sp;
                }
                double prior_log;  // log-density without constants
                std::vector<double> soft(na, 0.0);
                if (hp.closest_anchor_only) {
                    prior_log = exponents[dc.closest];
                    soft[dc.closest] = 1.0;
                } else {
                    prior_log = logsumexp(
                        std::span<const double>(exponents.data(), exponents.size()));
                    for (std::size_t k = 0; k < na; ++k)
                        soft[k] = std::exp(exponents[k] - prior_log);
                }
                out.terms.prior -= q * weights.prior * prior_log;
                out.terms.transopt -= q * prior_log;
                if (want_grads) {
                    for (std::size_t k = 0; k < na; ++k) {
                        if (soft[k] == 0.0) continue;
                        const std::size_t ai = dc.anchor_indices[k];
                        // d(-prior_log)/d z_scaled = soft_k * 2 zeta4 r_k.
                        const double w = 2.0 * q * weights.prior * soft[k] * hp.zeta4;
                        for (std::size_t i = 0; i < hp.latent_dim; ++i)
                            z_grad_scaled[i] += w * r_i[k][i];
                        z_grad_needed = true;
                        auto [ti_t, k_i] = mat_exp_frechet(transpose(a_i[k]),
                                                           outer(r_i[k], anchor_scaled[ai]));
                        Vec tr = matvec(ti_t, r_i[k]);
                        if (anchor_out_grad[ai].size() == 0)
                            anchor_out_grad[ai] = Vec(hp.latent_dim);
                        for (std::size_t i = 0; i < hp.latent_dim; ++i)
                            anchor_out_grad[ai][i] += -w * tr[i];
                        anchor_touched[ai] = true;
                        for (std::size_t m = 0; m < g.psi.size(); ++m) {
                            const double fac = -w * dc.c_prior[k][m];
                            for (std::size_t e = 0; e < k_i.count(); ++e)
                                g.psi[m].data()[e] += fac * k_i.data()[e];
                        }
                    }
                }
            }

            if (want_grads && z_grad_needed) {
                // z_scaled depends on the dictionary and mu_scaled through
                // T(c_hat): route the accumulated z gradient down both paths.
                auto [that_t, k_hat] =
                    mat_exp_frechet(transpose(gen_hat), outer(z_grad_scaled, mu_scaled));
                for (std::size_t m = 0; m < g.psi.size(); ++m) {
                    const double fac = c_hat[m];
                    for (std::size_t e = 0; e < k_hat.count(); ++e)
                        g.psi[m].data()[e] += fac * k_hat.data()[e];
                }
                Vec down = matvec(that_t, z_grad_scaled);
                for (std::size_t i = 0; i < hp.latent_dim; ++i)
                    mu_out_grad[i] += down[i];
                mu_needed = true;
            }
        }

        if (want_grads && mu_needed) {
            // mu_scaled = s * mu: chain the scale into the encoder backward.
            Vec enc_out_grad = s * mu_out_grad;
            MlpGrads eg = mlp_backward(model.encoder, enc_cache, enc_out_grad);
            g.encoder += eg;
        }
    }

    if (want_grads) {
        for (std::size_t ai = 0; ai < model.anchors.size(); ++ai) {
            if (!anchor_touched[ai]) continue;
            Vec out_grad = s * anchor_out_grad[ai];
            MlpGrads ag = mlp_backward(model.encoder, anchor_cache[ai], out_grad);
            g.anchors[ai] = ag.input;
            ag.input = Vec(hp.data_dim);  // anchor gradient, not a shared input
            g.encoder += ag;
        }
    }

    auto [frob_value, frob_grads] = frobenius_penalty(model.dictionary, hp.eta);
    out.terms.frob = frob_value;
    if (want_grads)
        for (std::size_t m = 0; m < g.psi.size(); ++m) g.psi[m] += frob_grads[m];

    out.terms.value = out.terms.recon + out.terms.post_fid + out.terms.post_sp +
                      out.terms.prior + out.terms.frob;
    if (!std::isfinite(out.terms.value))
        throw numeric_error(
            "objective is not finite (recon " + format_g17(out.terms.recon) +
            ", post_fid " + format_g17(out.terms.post_fid) + ", post_sp " +
            format_g17(out.terms.post_sp) + ", prior " + format_g17(out.terms.prior) +
            ", frob " + format_g17(out.terms.frob) + ")");
    return out;
}

struct FullObjective {
    ObjectiveTerms terms;
    ModelGrads grads;
    BatchNoise noise;
    BatchCoeffs coeffs;
    uint64_t eval_seed = 0;
};

// One complete evaluation: draw noise, infer coefficients, assemble the
// weighted objective and its gradients. Consumes from rng: the noise draws,
// then one u64 seeding the inference restart streams.
inline FullObjective full_objective(const ModelState& model, const Batch& batch,
                                    const Hyperparameters& hp, Rng& rng,
                                    const PhaseWeights& weights) {
    FullObjective out;
    out.noise = draw_noise(hp, batch.size(), rng);
    out.eval_seed = rng.u64();
    out.coeffs = infer_batch(model, batch, hp, out.noise, out.eval_seed, weights);
    ObjectiveResult res =
        objective_terms(model, batch, hp, out.noise, out.coeffs, weights, true);
    out.terms = res.terms;
    out.grads = std::move(res.grads);
    return out;
}

// Dictionary-dependent portion of the objective, evaluated at frozen noise
// and frozen inferred coefficients with every transport map rebuilt from
// `dict`. The sampled latents come from the incumbent dictionary either way,
// so scoring a candidate against the incumbent compares the two transport
// maps on identical inputs and nothing else varies between the evaluations.
inline double transport_objective(const ModelState& model,
                                  const TransportDictionary& dict,
                                  const Batch& batch, const Hyperparameters& hp,
                                  const BatchNoise& noise,
                                  const BatchCoeffs& coeffs) {
    if (batch.size() == 0) throw dim_error("transport_objective: empty batch");
    if (coeffs.per_point.size() != batch.size())
        throw dim_error("transport_objective: coefficients do not cover the batch");
    const double s = hp.latent_scale;
    const double q = 1.0 / (static_cast<double>(batch.size()) *
                            static_cast<double>(hp.samples_per_point));
    std::vector<Vec> anchor_scaled(model.anchors.size());
    std::vector<bool> anchor_ready(model.anchors.size(), false);
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Vec mu_scaled = s * mlp_forward(model.encoder, batch.inputs[b]).first;
        for (std::size_t j = 0; j < hp.samples_per_point; ++j) {
            const DrawCoeffs& dc = coeffs.per_point[b][j];
            const Vec c_hat = laplace_inverse_transform(noise[b][j].u, hp.laplace_scale);
            Vec z_scaled =
                matvec(mat_exp(weighted_generator(model.dictionary, c_hat)), mu_scaled);
            for (std::size_t i = 0; i < z_scaled.size(); ++i)
                z_scaled[i] += hp.gamma_post * noise[b][j].eps[i];

            Vec r_q = z_scaled -
                      matvec(mat_exp(weighted_generator(dict, dc.c_post)), mu_scaled);
            double sp = 0.0;
            for (std::size_t m = 0; m < dc.c_post.size(); ++m)
                sp += std::abs(dc.c_post[m]);
            total += q * (-hp.zeta2 * norm2_sq(r_q) - hp.zeta3 * sp);

            const std::size_t na = dc.c_prior.size();
            std::vector<double> exponents(na);
            for (std::size_t k = 0; k < na; ++k) {
                const std::size_t ai = dc.anchor_indices[k];
                if (!anchor_ready[ai]) {
                    anchor_scaled[ai] =
                        s * mlp_forward(model.encoder, model.anchors.anchors[ai]).first;
                    anchor_ready[ai] = true;
                }
                Vec r_i = z_scaled - matvec(mat_exp(weighted_generator(dict, dc.c_prior[k])),
                                            anchor_scaled[ai]);
                double sp_i = 0.0;
                for (std::size_t m = 0; m < dc.c_prior[k].size(); ++m)
                    sp_i += std::abs(dc.c_prior[k][m]);
                exponents[k] = -hp.zeta4 * norm2_sq(r_i) - hp.zeta5 * sp_i;
            }
            const double prior_log =
                hp.closest_anchor_only
                    ? exponents[dc.closest]
                    : logsumexp(std::span<const double>(exponents.data(), na));
            total -= q * prior_log;
        }
    }
    if (!std::isfinite(total))
        throw numeric_error("transport objective is not finite");
    return total;
}

struct TransportStepResult {
    bool accepted = false;
    double lr_psi = 0.0;
    ObjectiveTerms terms;    // evaluation at the incumbent dictionary
    BatchCoeffs coeffs;      // inference bookkeeping for logging
};

// Proposes a gradient step on the dictionary and keeps it only if the
// dictionary-dependent portion of the objective improves strictly. The
// coefficients are inferred once per step; the candidate is scored against
// the incumbent at those frozen coefficients, the frozen noise, and the
// incumbent's sampled latents, so the comparison is deterministic. Accept
// grows the learning rate toward lr_psi_max; reject shrinks it. Ties reject.
inline TransportStepResult transport_step(ModelState& model, const Batch& batch,
                                          const Hyperparameters& hp, Rng& rng,
                                          double lr_psi) {
    if (!(lr_psi > 0.0)) throw config_error("transport_step: lr_psi must be positive");
    PhaseWeights weights{hp.recon_weight_during_psi_steps, 1.0, 1.0};
    TransportStepResult out;

    BatchNoise noise = draw_noise(hp, batch.size(), rng);
    const uint64_t eval_seed = rng.u64();
    BatchCoeffs coeffs = infer_batch(model, batch, hp, noise, eval_seed, weights);
    ObjectiveResult before =
        objective_terms(model, batch, hp, noise, coeffs, weights, true);

    TransportDictionary trial = model.dictionary;
    for (std::size_t m = 0; m < trial.size(); ++m) {
        Mat step = before.grads.psi[m];
        step *= lr_psi;
        trial.operators[m] -= step;
    }
    const double before_t = transport_objective(model, model.dictionary, batch, hp,
                                                noise, coeffs);
    const double after_t = transport_objective(model, trial, batch, hp, noise, coeffs);

    out.terms = before.terms;
    out.coeffs = std::move(coeffs);
    if (after_t < before_t) {
        model.dictionary = std::move(trial);
        out.accepted = true;
        out.lr_psi = std::min(lr_psi * hp.lr_decay, hp.lr_psi_max);
    } else {
        out.accepted = false;
        out.lr_psi = lr_psi / hp.lr_decay;
    }
    return out;
}

enum class TrainPhase { warmup, net, psi };

inline const char* to_string(TrainPhase p) {
    switch (p) {
        case TrainPhase::warmup: return "warmup";
        case TrainPhase::net: return "net";
        default: return "psi";
    }
}

struct TrainingLogRow {
    long step = 0;
    TrainPhase phase = TrainPhase::warmup;
    ObjectiveTerms terms;
    int psi_accepted = -1;  // -1 outside psi phase
    double lr_psi = 0.0;
    double infer_iters_mean = 0.0;
    long infer_iters_max = 0;
    std::vector<double> psi_fro;
    double wall_seconds = 0.0;  // reported separately, never byte-compared
};

struct TrainingLog {
    std::vector<TrainingLogRow> rows;
};

inline TrainPhase train_phase_from_string(const std::string& s) {
    if (s == "warmup") return TrainPhase::warmup;
    if (s == "net") return TrainPhase::net;
    if (s == "psi") return TrainPhase::psi;
    throw config_error("unknown training phase '" + s + "'");
}

// The log is split across two files: the numeric log, which is a deterministic
// function of config and seed, and a timing sidecar that is not.
inline void write_training_log_csv(const TrainingLog& log, std::size_t num_operators,
                                   const std::string& log_path,
                                   const std::string& timing_path) {
    std::vector<std::string> header = {"step",    "phase",        "objective",
                                       "recon",   "post_fid",     "post_sp",
                                       "prior",   "frob_penalty", "psi_accepted",
                                       "lr_psi",  "infer_iters_mean",
                                       "infer_iters_max"};
    for (std::size_t m = 0; m < num_operators; ++m)
        header.push_back("psi_fro_" + std::to_string(m));
    CsvWriter out(log_path, header);
    for (const auto& row : log.rows) {
        if (row.psi_fro.size() != num_operators)
            throw config_error("training log row has wrong operator count");
        std::vector<std::string> fields = {
            std::to_string(row.step),
            to_string(row.phase),
            format_g17(row.terms.value),
            format_g17(row.terms.recon),
            format_g17(row.terms.post_fid),
            format_g17(row.terms.post_sp),
            format_g17(row.terms.prior),
            format_g17(row.terms.frob),
            row.psi_accepted < 0 ? std::string() : std::to_string(row.psi_accepted),
            format_g17(row.lr_psi),
            format_g17(row.infer_iters_mean),
            std::to_string(row.infer_iters_max)};
        for (double f : row.psi_fro) fields.push_back(format_g17(f));
        out.write_row(fields);
    }

    CsvWriter timing(timing_path, {"step", "wall_seconds"});
    for (const auto& row : log.rows)
        timing.write_row({std::to_string(row.step), format_g17(row.wall_seconds)});
}

// timing_path may be empty; wall times then read as zero.
inline TrainingLog read_training_log_csv(const std::string& log_path,
                                         const std::string& timing_path = "") {
    const CsvTable table = read_csv(log_path);
    auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < table.header.size(); ++i)
            if (table.header[i] == name) return i;
        throw config_error("training log " + log_path + " missing column '" + name +
                           "'");
    };
    const std::size_t c_step = col("step"), c_phase = col("phase"),
                      c_obj = col("objective"), c_recon = col("recon"),
                      c_pfid = col("post_fid"), c_psp = col("post_sp"),
                      c_prior = col("prior"), c_frob = col("frob_penalty"),
                      c_acc = col("psi_accepted"), c_lr = col("lr_psi"),
                      c_im = col("infer_iters_mean"), c_ix = col("infer_iters_max");
    std::vector<std::size_t> c_fro;
    for (std::size_t m = 0;; ++m) {
        const std::string name = "psi_fro_" + std::to_string(m);
        bool found = false;
        for (std::size_t i = 0; i < table.header.size(); ++i)
            if (table.header[i] == name) {
                c_fro.push_back(i);
                found = true;
                break;
            }
        if (!found) break;
    }
    if (c_fro.empty())
        throw config_error("training log " + log_path + " has no psi_fro columns");

    TrainingLog log;
    for (const auto& fields : table.rows) {
        TrainingLogRow row;
        row.step = parse_long(fields.at(c_step), "step");
        row.phase = train_phase_from_string(fields.at(c_phase));
        row.terms.value = parse_double(fields.at(c_obj), "objective");
        row.terms.recon = parse_double(fields.at(c_recon), "recon");
        row.terms.post_fid = parse_double(fields.at(c_pfid), "post_fid");
        row.terms.post_sp = parse_double(fields.at(c_psp), "post_sp");
        row.terms.prior = parse_double(fields.at(c_prior), "prior");
        row.terms.frob = parse_double(fields.at(c_frob), "frob_penalty");
        const std::string& acc = fields.at(c_acc);
        row.psi_accepted = acc.empty() ? -1 : static_cast<int>(parse_long(acc, "psi_accepted"));
        row.lr_psi = parse_double(fields.at(c_lr), "lr_psi");
        row.infer_iters_mean = parse_double(fields.at(c_im), "infer_iters_mean");
        row.infer_iters_max = parse_long(fields.at(c_ix), "infer_iters_max");
        for (std::size_t c : c_fro)
            row.psi_fro.push_back(parse_double(fields.at(c), "psi_fro"));
        log.rows.push_back(std::move(row));
    }

    if (!timing_path.empty()) {
        const CsvTable tt = read_csv(timing_path);
        if (tt.header.size() < 2 || tt.header[0] != "step" ||
            tt.header[1] != "wall_seconds")
            throw config_error("bad timing header in " + timing_path);
        if (tt.rows.size() != log.rows.size())
            throw config_error("timing row count does not match log in " + timing_path);
        for (std::size_t i = 0; i < tt.rows.size(); ++i)
            log.rows[i].wall_seconds = parse_double(tt.rows[i].at(1), "wall_seconds");
    }
    return log;
}

namespace detail {

inline void adam_step_anchors(ModelState& model, const std::vector<Vec>& grads,
                              double lr) {
    if (model.anchors.size() == 0) return;
    const std::size_t dim = model.anchors.anchors[0].size();
    std::vector<double> flat_p(model.anchors.size() * dim);
    std::vector<double> flat_g(model.anchors.size() * dim);
    for (std::size_t i = 0; i < model.anchors.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            flat_p[i * dim + j] = model.anchors.anchors[i][j];
            flat_g[i * dim + j] = grads[i][j];
        }
    adam_step(std::span<double>(flat_p), std::span<const double>(flat_g),
              model.anchor_adam, lr);
    for (std::size_t i = 0; i < model.anchors.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j)
            model.anchors.anchors[i][j] = flat_p[i * dim + j];
}

inline Batch sample_batch(const LabeledDataset& data, std::size_t batch_size,
                          Rng& rng) {
    Batch batch;
    for (std::size_t k = 0; k < batch_size; ++k) {
        const std::size_t idx = std::min(
            static_cast<std::size_t>(rng.uniform() * static_cast<double>(data.size())),
            data.size() - 1);
        batch.inputs.push_back(data.inputs[idx]);
        batch.labels.push_back(data.labels[idx]);
    }
    return batch;
}

}  // namespace detail

// Algorithm: warm-up steps train the networks on reconstruction alone with
// degenerate sampling (no Gaussian noise, near-zero coefficients); then
// either alternating phases (net_update_steps of network+anchor Adam updates
// with the dictionary frozen, psi_update_steps of accept/reject dictionary
// steps with the networks frozen) or, when both phase lengths are zero, the
// simultaneous scheme (every step computes one set of gradients, applies the
// dictionary accept/reject first, then the network and anchor updates using
// those same gradients). Rows are appended to log_out as they complete, so
// a numeric failure leaves the log intact for flushing.
inline ModelState train(const LabeledDataset& data, const Hyperparameters& hp,
                        AnchorSet anchors, uint64_t seed, TrainingLog& log_out) {
    validate(hp);
    if (data.size() == 0) throw config_error("training dataset is empty");
    for (int cls : distinct_labels(data)) {
        bool covered = false;
        for (int al : anchors.labels)
            if (al == cls) covered = true;
        if (!covered)
            throw config_error("no anchors cover class " + std::to_string(cls));
    }
    Rng rng(seed);
    ModelState model = init_model(hp, std::move(anchors), rng);

    Hyperparameters warm_hp = hp;
    warm_hp.laplace_scale = 1e-6;
    warm_hp.gamma_post = 0.0;

    const bool simultaneous = hp.net_update_steps == 0 && hp.psi_update_steps == 0;
    double lr_psi = hp.lr_psi_start;

    for (long step = 0; step < hp.train_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        Batch batch = detail::sample_batch(data, hp.batch_size, rng);
        TrainingLogRow row;
        row.step = step;

        if (step < hp.warmup_steps) {
            row.phase = TrainPhase::warmup;
            PhaseWeights weights{1.0, 0.0, 0.0};
            FullObjective fo = full_objective(model, batch, warm_hp, rng, weights);
            adam_step(model.encoder, fo.grads.encoder, model.enc_adam, hp.lr_net);
            adam_step(model.decoder, fo.grads.decoder, model.dec_adam, hp.lr_net);
            row.terms = fo.terms;
        } else if (simultaneous) {
            row.phase = TrainPhase::psi;
            PhaseWeights weights{1.0, 1.0, 1.0};
            BatchNoise noise = draw_noise(hp, batch.size(), rng);
            const uint64_t eval_seed = rng.u64();
            BatchCoeffs coeffs =
                infer_batch(model, batch, hp, noise, eval_seed, weights);
            ObjectiveResult res =
                objective_terms(model, batch, hp, noise, coeffs, weights, true);

            // Dictionary accept/reject first, then the network and anchor
            // updates from the gradients taken at the incumbent parameters.
            // The candidate is scored at the frozen coefficients and the
            // incumbent's sampled latents, same protocol as transport_step.
            TransportDictionary trial = model.dictionary;
            for (std::size_t m = 0; m < trial.size(); ++m) {
                Mat delta = res.grads.psi[m];
                delta *= lr_psi;
                trial.operators[m] -= delta;
            }
            const double before_t = transport_objective(model, model.dictionary,
                                                        batch, hp, noise, coeffs);
            const double after_t =
                transport_objective(model, trial, batch, hp, noise, coeffs);
            if (after_t < before_t) {
                model.dictionary = std::move(trial);
                row.psi_accepted = 1;
                lr_psi = std::min(lr_psi * hp.lr_decay, hp.lr_psi_max);
            } else {
                row.psi_accepted = 0;
                lr_psi = lr_psi / hp.lr_decay;
            }
            adam_step(model.encoder, res.grads.encoder, model.enc_adam, hp.lr_net);
            adam_step(model.decoder, res.grads.decoder, model.dec_adam, hp.lr_net);
            detail::adam_step_anchors(model, res.grads.anchors, hp.lr_anchor);
            row.terms = res.terms;
            if (coeffs.num_calls > 0) {
                row.infer_iters_mean = static_cast<double>(coeffs.total_iterations) /
                                       static_cast<double>(coeffs.num_calls);
                row.infer_iters_max = coeffs.max_iterations;
            }
        } else {
            const long cycle = hp.net_update_steps + hp.psi_update_steps;
            const long pos = (step - hp.warmup_steps) % cycle;
            if (pos < hp.net_update_steps) {
                row.phase = TrainPhase::net;
                PhaseWeights weights{1.0, 1.0, hp.prior_weight_during_net_steps};
                FullObjective fo = full_objective(model, batch, hp, rng, weights);
                adam_step(model.encoder, fo.grads.encoder, model.enc_adam, hp.lr_net);
                adam_step(model.decoder, fo.grads.decoder, model.dec_adam, hp.lr_net);
                detail::adam_step_anchors(model, fo.grads.anchors, hp.lr_anchor);
                row.terms = fo.terms;
                if (fo.coeffs.num_calls > 0) {
                    row.infer_iters_mean =
                        static_cast<double>(fo.coeffs.total_iterations) /
                        static_cast<double>(fo.coeffs.num_calls);
                    row.infer_iters_max = fo.coeffs.max_iterations;
                }
            } else {
                row.phase = TrainPhase::psi;
                TransportStepResult ts = transport_step(model, batch, hp, rng, lr_psi);
                lr_psi = ts.lr_psi;
                row.psi_accepted = ts.accepted ? 1 : 0;
                row.terms = ts.terms;
                if (ts.coeffs.num_calls > 0) {
                    row.infer_iters_mean =
                        static_cast<double>(ts.coeffs.total_iterations) /
                        static_cast<double>(ts.coeffs.num_calls);
                    row.infer_iters_max = ts.coeffs.max_iterations;
                }
            }
        }

        row.lr_psi = lr_psi;
        for (const Mat& psi : model.dictionary.operators)
            row.psi_fro.push_back(frobenius_norm(psi));
        row.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        log_out.rows.push_back(std::move(row));
    }
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoint format "VAELLS-CKPT v1": a text header (magic line, one meta
// line of key=value pairs, one line per tensor) then a blank line and the
// raw row-major little-endian f64 payloads concatenated in header order.

struct DatasetInfo {
    DatasetKind kind = DatasetKind::swiss_roll;
    uint64_t data_seed = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::size_t glyph_side = 0;
};

struct Checkpoint {
    ModelState model;
    Hyperparameters hp;
    DatasetInfo data;
};

namespace detail {

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> dims;
    const double* data;
    std::size_t count;
};

inline void collect_mlp_tensors(const MlpParams& p, const std::string& prefix,
                                std::vector<NamedTensor>& out) {
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        out.push_back({prefix + ".W" + std::to_string(l),
                       {p.weights[l].rows(), p.weights[l].cols()},
                       p.weights[l].data(),
                       p.weights[l].count()});
        out.push_back({prefix + ".b" + std::to_string(l),
                       {p.biases[l].size()},
                       p.biases[l].data(),
                       p.biases[l].size()});
    }
}

inline std::vector<NamedTensor> checkpoint_tensors(const ModelState& model) {
    std::vector<NamedTensor> tensors;
    collect_mlp_tensors(model.encoder, "enc", tensors);
    collect_mlp_tensors(model.decoder, "dec", tensors);
    for (std::size_t m = 0; m < model.dictionary.size(); ++m)
        tensors.push_back({"psi." + std::to_string(m),
                           {model.dictionary.operators[m].rows(),
                            model.dictionary.operators[m].cols()},
                           model.dictionary.operators[m].data(),
                           model.dictionary.operators[m].count()});
    for (std::size_t i = 0; i < model.anchors.size(); ++i)
        tensors.push_back({"anchor." + std::to_string(i),
                           {model.anchors.anchors[i].size()},
                           model.anchors.anchors[i].data(),
                           model.anchors.anchors[i].size()});
    return tensors;
}

inline void write_le_doubles(std::ofstream& out, const double* data,
                             std::size_t count) {
    static_assert(sizeof(double) == 8);
    // Little-endian hosts write payloads directly; the format is defined as
    // little-endian on the wire.
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const ModelState& model,
                             const Hyperparameters& hp, const DatasetInfo& info) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot open checkpoint for writing: " + path);
    out << "VAELLS-CKPT v1\n";
    std::ostringstream meta;
    meta << "meta d=" << hp.latent_dim << " D=" << hp.data_dim
         << " M=" << hp.num_operators << " Na=" << model.anchors.size()
         << " latent_scale=" << format_g17(hp.latent_scale)
         << " dataset=" << to_string(info.kind) << " data_seed=" << info.data_seed
         << " n_train=" << info.n_train << " n_test=" << info.n_test
         << " glyph_side=" << info.glyph_side << " hidden=" << hp.hidden_width
         << " sigmoid_output=" << (hp.sigmoid_output ? 1 : 0)
         << " zeta1=" << format_g17(hp.zeta1) << " zeta2=" << format_g17(hp.zeta2)
         << " zeta3=" << format_g17(hp.zeta3) << " zeta4=" << format_g17(hp.zeta4)
         << " zeta5=" << format_g17(hp.zeta5) << " zeta_q=" << format_g17(hp.zeta_q)
         << " zeta_p=" << format_g17(hp.zeta_p) << " eta=" << format_g17(hp.eta)
         << " gamma_post=" << format_g17(hp.gamma_post)
         << " laplace_scale=" << format_g17(hp.laplace_scale)
         << " num_restarts=" << hp.num_restarts
         << " closest_anchor_only=" << (hp.closest_anchor_only ? 1 : 0)
         << " infer_max_iterations=" << hp.infer_max_iterations
         << " infer_tolerance=" << format_g17(hp.infer_tolerance)
         << " infer_init_low=" << format_g17(hp.infer_init_low)
         << " infer_init_high=" << format_g17(hp.infer_init_high)
         << " anchor_labels=";
    for (std::size_t i = 0; i < model.anchors.size(); ++i) {
        if (i) meta << ',';
        meta << model.anchors.labels[i];
    }
    out << meta.str() << "\n";
    auto tensors = detail::checkpoint_tensors(model);
    for (const auto& t : tensors) {
        out << "tensor " << t.name << " f64 ";
        for (std::size_t i = 0; i < t.dims.size(); ++i) {
            if (i) out << 'x';
            out << t.dims[i];
        }
        out << "\n";
    }
    out << "\n";
    for (const auto& t : tensors) detail::write_le_doubles(out, t.data, t.count);
    if (!out) throw config_error("failed writing checkpoint payload: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "VAELLS-CKPT v1")
        throw config_error("bad checkpoint magic in " + path + ": '" + line + "'");
    if (!std::getline(in, line) || line.rfind("meta ", 0) != 0)
        throw config_error("checkpoint missing meta line in " + path + ": '" + line +
                           "'");
    std::map<std::string, std::string> meta;
    {
        std::istringstream ms(line.substr(5));
        std::string kv;
        while (ms >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw config_error("bad meta entry '" + kv + "' in " + path);
            meta[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
    }
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end())
            throw config_error("checkpoint meta missing key '" + key + "' in " + path);
        return it->second;
    };

    Checkpoint ck;
    Hyperparameters& hp = ck.hp;
    hp.latent_dim = static_cast<std::size_t>(parse_long(need("d"), "meta d"));
    hp.data_dim = static_cast<std::size_t>(parse_long(need("D"), "meta D"));
    hp.num_operators = static_cast<std::size_t>(parse_long(need("M"), "meta M"));
    hp.hidden_width = static_cast<std::size_t>(parse_long(need("hidden"), "meta hidden"));
    hp.sigmoid_output = parse_long(need("sigmoid_output"), "meta") != 0;
    hp.latent_scale = parse_double(need("latent_scale"), "meta");
    hp.zeta1 = parse_double(need("zeta1"), "meta");
    hp.zeta2 = parse_double(need("zeta2"), "meta");
    hp.zeta3 = parse_double(need("zeta3"), "meta");
    hp.zeta4 = parse_double(need("zeta4"), "meta");
    hp.zeta5 = parse_double(need("zeta5"), "meta");
    hp.zeta_q = parse_double(need("zeta_q"), "meta");
    hp.zeta_p = parse_double(need("zeta_p"), "meta");
    hp.eta = parse_double(need("eta"), "meta");
    hp.gamma_post = parse_double(need("gamma_post"), "meta");
    hp.laplace_scale = parse_double(need("laplace_scale"), "meta");
    hp.num_restarts = static_cast<int>(parse_long(need("num_restarts"), "meta"));
    hp.closest_anchor_only = parse_long(need("closest_anchor_only"), "meta") != 0;
    hp.infer_max_iterations =
        static_cast<int>(parse_long(need("infer_max_iterations"), "meta"));
    hp.infer_tolerance = parse_double(need("infer_tolerance"), "meta");
    hp.infer_init_low = parse_double(need("infer_init_low"), "meta");
    hp.infer_init_high = parse_double(need("infer_init_high"), "meta");
    const std::size_t num_anchors =
        static_cast<std::size_t>(parse_long(need("Na"), "meta Na"));

    ck.data.kind = dataset_kind_from_string(need("dataset"));
    ck.data.data_seed = static_cast<uint64_t>(parse_long(need("data_seed"), "meta"));
    ck.data.n_train = static_cast<std::size_t>(parse_long(need("n_train"), "meta"));
    ck.data.n_test = static_cast<std::size_t>(parse_long(need("n_test"), "meta"));
    ck.data.glyph_side = static_cast<std::size_t>(parse_long(need("glyph_side"), "meta"));

    std::vector<int> anchor_labels;
    {
        std::istringstream ls(need("anchor_labels"));
        std::string tok;
        while (std::getline(ls, tok, ','))
            if (!tok.empty())
                anchor_labels.push_back(
                    static_cast<int>(parse_long(tok, "meta anchor_labels")));
    }
    if (anchor_labels.size() != num_anchors)
        throw config_error("anchor_labels count does not match Na in " + path);

    struct HeaderTensor {
        std::string name;
        std::vector<std::size_t> dims;
    };
    std::vector<HeaderTensor> headers;
    while (std::getline(in, line)) {
        if (line.empty()) break;
        std::istringstream ts(line);
        std::string tag, name, dtype, shape;
        if (!(ts >> tag >> name >> dtype >> shape) || tag != "tensor" || dtype != "f64")
            throw config_error("bad tensor header in " + path + ": '" + line + "'");
        HeaderTensor ht;
        ht.name = name;
        std::istringstream ss(shape);
        std::string dim;
        while (std::getline(ss, dim, 'x'))
            ht.dims.push_back(static_cast<std::size_t>(parse_long(dim, "tensor shape")));
        headers.push_back(std::move(ht));
    }

    std::map<std::string, std::vector<double>> payload;
    std::map<std::string, std::vector<std::size_t>> shapes;
    for (const auto& ht : headers) {
        std::size_t count = 1;
        for (std::size_t d : ht.dims) count *= d;
        std::vector<double> values(count);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
            throw config_error("truncated payload for tensor " + ht.name + " in " +
                               path);
        payload[ht.name] = std::move(values);
        shapes[ht.name] = ht.dims;
    }

    auto take_mat = [&](const std::string& name) {
        auto it = payload.find(name);
        if (it == payload.end())
            throw config_error("checkpoint missing tensor " + name + " in " + path);
        const auto& dims = shapes[name];
        if (dims.size() != 2)
            throw config_error("tensor " + name + " is not 2-D in " + path);
        Mat m(dims[0], dims[1]);
        std::copy(it->second.begin(), it->second.end(), m.data());
        return m;
    };
    auto take_vec = [&](const std::string& name) {
        auto it = payload.find(name);
        if (it == payload.end())
            throw config_error("checkpoint missing tensor " + name + " in " + path);
        Vec v(it->second.size());
        std::copy(it->second.begin(), it->second.end(), v.begin());
        return v;
    };

    ModelState& model = ck.model;
    model.encoder.spec = MlpSpec{{hp.data_dim, hp.hidden_width, hp.latent_dim},
                                 {Activation::relu, Activation::identity}};
    model.decoder.spec =
        MlpSpec{{hp.latent_dim, hp.hidden_width, hp.data_dim},
                {Activation::relu,
                 hp.sigmoid_output ? Activation::sigmoid : Activation::identity}};
    for (std::size_t l = 0; l < 2; ++l) {
        model.encoder.weights.push_back(take_mat("enc.W" + std::to_string(l)));
        model.encoder.biases.push_back(take_vec("enc.b" + std::to_string(l)));
        model.decoder.weights.push_back(take_mat("dec.W" + std::to_string(l)));
        model.decoder.biases.push_back(take_vec("dec.b" + std::to_string(l)));
    }
    model.dictionary.latent_dim = hp.latent_dim;
    for (std::size_t m = 0; m < hp.num_operators; ++m)
        model.dictionary.operators.push_back(take_mat("psi." + std::to_string(m)));
    for (std::size_t i = 0; i < num_anchors; ++i) {
        model.anchors.anchors.push_back(take_vec("anchor." + std::to_string(i)));
        model.anchors.labels.push_back(anchor_labels[i]);
    }
    // Shape consistency between meta and tensors.
    if (model.encoder.weights[0].cols() != hp.data_dim ||
        model.encoder.weights[1].rows() != hp.latent_dim)
        throw config_error("encoder tensor shapes disagree with meta in " + path);
    model.enc_adam = make_adam_state(param_count(model.encoder));
    model.dec_adam = make_adam_state(param_count(model.decoder));
    model.anchor_adam = make_adam_state(num_anchors * hp.data_dim);
    return ck;
}

// Regenerates the dataset a checkpoint was trained on (train+test in one
// stream, caller slices by n_train).
inline LabeledDataset regenerate_dataset(const DatasetInfo& info) {
    Rng rng(info.data_seed);
    const std::size_t total = info.n_train + info.n_test;
    switch (info.kind) {
        case DatasetKind::swiss_roll: return gen_swiss_roll(total, rng);
        case DatasetKind::circles: return gen_concentric_circles(total, rng);
        default: return gen_rotated_glyphs(total, info.glyph_side, rng);
    }
}

}  // namespace vaells
