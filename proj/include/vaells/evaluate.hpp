#pragma once

// Model evaluation: importance-sampled log-likelihood, reconstruction error,
// posterior contour grids, prior visualization sampling, and training-run
// diagnostics. Everything here is read-only over the model.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vaells/csv.hpp"
#include "vaells/model.hpp"

namespace vaells {

namespace detail {

struct PairDensity {
    double value = 0.0;  // -fid_weight*||r||^2 - sp_weight*sum|c|, no constants
    Vec c_star;
    double sparsity_l1 = 0.0;
};

inline PairDensity pair_density(const TransportDictionary& dict, const Vec& z_scaled,
                                const Vec& mu_scaled, double fid_weight,
                                double sp_weight, const InferenceSettings& settings,
                                Rng& rng) {
    auto res = infer_coefficients(dict, z_scaled, mu_scaled, settings, rng);
    Vec r = z_scaled - matvec(transform(dict, res.coeffs), mu_scaled);
    PairDensity out;
    for (std::size_t m = 0; m < res.coeffs.size(); ++m)
        out.sparsity_l1 += std::abs(res.coeffs[m]);
    out.value = -fid_weight * norm2_sq(r) - sp_weight * out.sparsity_l1;
    out.c_star = std::move(res.coeffs);
    return out;
}

}  // namespace detail

// Importance-sampled log-likelihood estimate. For each of the first
// num_points data points, num_samples posterior draws are weighted by
// log p(x|z) + log p(z) - log q(z|x) with all normalization constants
// included; the density fidelity and sparsity weights come from the sampling
// parameters (1/(2 gamma^2) and 1/b), while coefficient inference uses unit
// fidelity weight with the training sparsity weights. Per point and sample,
// the generator supplies: the posterior draw, one posterior inference, then
// one u64 seeding a shared restart stream copied to every same-class anchor
// inference.
inline double estimated_log_likelihood(const ModelState& model,
                                       const LabeledDataset& data,
                                       const Hyperparameters& hp,
                                       std::size_t num_points,
                                       std::size_t num_samples, Rng& rng) {
    if (num_points == 0 || num_samples == 0)
        throw config_error("log-likelihood estimation needs points and samples");
    if (num_points > data.size())
        throw config_error("num_points exceeds dataset size");
    if (data.data_dim() != hp.data_dim ||
        model.encoder.spec.layer_sizes.front() != hp.data_dim)
        throw config_error("model and data dimensions disagree");
    if (!(hp.gamma_post > 0.0))
        throw config_error("log-likelihood estimation needs gamma_post > 0");

    const double s = hp.latent_scale;
    const double gamma = hp.gamma_post;
    const double b = hp.laplace_scale;
    const double fid_w = 1.0 / (2.0 * gamma * gamma);
    const double sp_w = 1.0 / b;
    const double dim = static_cast<double>(hp.data_dim);
    const double sigma = 1.0 / std::sqrt(2.0 * hp.zeta1);
    const double c1 = 0.5 * dim * std::log(2.0 * M_PI) + dim * std::log(sigma);
    const double c2 =
        posterior_log_constant(hp.latent_dim, gamma, hp.num_operators, b);
    const InferenceSettings post_settings =
        detail::inference_settings(hp, hp.zeta_q, 1.0);
    const InferenceSettings prior_settings =
        detail::inference_settings(hp, hp.zeta_p, 1.0);

    double total = 0.0;
    for (std::size_t p = 0; p < num_points; ++p) {
        const Vec& x = data.inputs[p];
        Vec mu_scaled = s * encode(model, x);
        std::vector<double> log_weights;
        for (std::size_t k = 0; k < num_samples; ++k) {
            PosteriorSample smp = sample_posterior(model, x, hp, rng);
            Vec xhat = decode(model, smp.z);
            Vec rx = x - xhat;
            const double log_px = -(c1 + hp.zeta1 * norm2_sq(rx));

            Vec z_scaled = s * smp.z;
            detail::PairDensity q = detail::pair_density(
                model.dictionary, z_scaled, mu_scaled, fid_w, sp_w, post_settings, rng);
            const double log_q = c2 + q.value;

            const Rng shared(rng.u64());
            std::vector<double> exponents;
            for (std::size_t i = 0; i < model.anchors.size(); ++i) {
                if (model.anchors.labels[i] != data.labels[p]) continue;
                Vec anchor_scaled = s * encode(model, model.anchors.anchors[i]);
                Rng per_anchor = shared;
                detail::PairDensity pd =
                    detail::pair_density(model.dictionary, z_scaled, anchor_scaled,
                                         fid_w, sp_w, prior_settings, per_anchor);
                exponents.push_back(pd.value);
            }
            if (exponents.empty())
                throw config_error("no anchors for class " +
                                   std::to_string(data.labels[p]));
            double log_pz;
            if (hp.closest_anchor_only) {
                log_pz = c2 + *std::max_element(exponents.begin(), exponents.end());
            } else {
                log_pz = c2 - std::log(static_cast<double>(exponents.size())) +
                         logsumexp(std::span<const double>(exponents.data(),
                                                           exponents.size()));
            }
            log_weights.push_back(log_px + log_pz - log_q);
        }
        total += logsumexp(std::span<const double>(log_weights.data(),
                                                   log_weights.size())) -
                 std::log(static_cast<double>(num_samples));
    }
    return total / static_cast<double>(num_points);
}

// Mean squared reconstruction error per data dimension.
inline double reconstruction_mse(const ModelState& model, const LabeledDataset& data) {
    if (data.size() == 0) throw config_error("reconstruction_mse: empty dataset");
    double total = 0.0;
    for (const Vec& x : data.inputs) {
        Vec r = x - decode(model, encode(model, x));
        total += norm2_sq(r) / static_cast<double>(x.size());
    }
    return total / static_cast<double>(data.size());
}

struct GridSpec {
    double z1_min = -1.0, z1_max = 1.0;
    double z2_min = -1.0, z2_max = 1.0;
    std::size_t resolution1 = 32, resolution2 = 32;
};

// Per-cell decomposition of the variational posterior log density over a
// 2-D latent grid: fidelity = -zeta2*||r||^2 and sparsity = -zeta3*sum|c*|
// at the per-cell inferred coefficients, total = C2 + fidelity + sparsity.
struct ContourGrid {
    GridSpec spec;
    double log_constant = 0.0;
    std::vector<double> fidelity, sparsity, total;  // z1-major order

    std::size_t index(std::size_t i, std::size_t j) const {
        return i * spec.resolution2 + j;
    }
    double z1_at(std::size_t i) const {
        if (spec.resolution1 == 1) return spec.z1_min;
        return spec.z1_min + (spec.z1_max - spec.z1_min) * static_cast<double>(i) /
                                 static_cast<double>(spec.resolution1 - 1);
    }
    double z2_at(std::size_t j) const {
        if (spec.resolution2 == 1) return spec.z2_min;
        return spec.z2_min + (spec.z2_max - spec.z2_min) * static_cast<double>(j) /
                                 static_cast<double>(spec.resolution2 - 1);
    }
};

inline ContourGrid posterior_contour(const ModelState& model, const Vec& x,
                                     const GridSpec& spec, const Hyperparameters& hp,
                                     Rng& rng) {
    if (hp.latent_dim != 2 || model.dictionary.latent_dim != 2)
        throw dim_error("posterior_contour requires a 2-D latent space");
    if (spec.resolution1 < 1 || spec.resolution2 < 1)
        throw config_error("contour grid resolution must be positive");
    if (!(spec.z1_max >= spec.z1_min) || !(spec.z2_max >= spec.z2_min))
        throw config_error("contour grid ranges are inverted");

    ContourGrid grid;
    grid.spec = spec;
    grid.log_constant = posterior_log_constant(hp.latent_dim, hp.gamma_post,
                                               hp.num_operators, hp.laplace_scale);
    const double s = hp.latent_scale;
    Vec mu_scaled = s * encode(model, x);
    const InferenceSettings settings =
        detail::inference_settings(hp, hp.zeta_q, hp.zeta2);
    const std::size_t cells = spec.resolution1 * spec.resolution2;
    grid.fidelity.reserve(cells);
    grid.sparsity.reserve(cells);
    grid.total.reserve(cells);
    for (std::size_t i = 0; i < spec.resolution1; ++i) {
        for (std::size_t j = 0; j < spec.resolution2; ++j) {
            Vec z_scaled{s * grid.z1_at(i), s * grid.z2_at(j)};
            auto res = infer_coefficients(model.dictionary, z_scaled, mu_scaled,
                                          settings, rng);
            Vec r = z_scaled - matvec(transform(model.dictionary, res.coeffs),
                                      mu_scaled);
            double l1 = 0.0;
            for (std::size_t m = 0; m < res.coeffs.size(); ++m)
                l1 += std::abs(res.coeffs[m]);
            grid.fidelity.push_back(-hp.zeta2 * norm2_sq(r));
            grid.sparsity.push_back(-hp.zeta3 * l1);
            grid.total.push_back(grid.log_constant + grid.fidelity.back() +
                                 grid.sparsity.back());
        }
    }
    return grid;
}

struct PriorSample {
    Vec z;
    std::size_t anchor_index = 0;  // index into the model's anchor set
};

// Draws latent samples from the anchor-based prior with visualization noise
// scales. Each sample picks a same-class anchor uniformly, then applies the
// reparameterized transport draw from that anchor's encoding. Draw order per
// sample: one uniform (anchor choice), M uniforms, latent_dim normals.
inline std::vector<PriorSample> prior_samples(const ModelState& model,
                                              int class_label, std::size_t n,
                                              double b_vis, double gamma_vis,
                                              const Hyperparameters& hp, Rng& rng) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < model.anchors.size(); ++i)
        if (model.anchors.labels[i] == class_label) candidates.push_back(i);
    if (candidates.empty())
        throw config_error("prior_samples: no anchors for class " +
                           std::to_string(class_label));
    if (!(b_vis > 0.0) || !(gamma_vis >= 0.0))
        throw config_error("prior_samples: b_vis must be positive, gamma_vis >= 0");

    const double s = hp.latent_scale;
    std::vector<PriorSample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t pick = std::min(
            static_cast<std::size_t>(rng.uniform() *
                                     static_cast<double>(candidates.size())),
            candidates.size() - 1);
        const std::size_t ai = candidates[pick];
        Vec u(hp.num_operators);
        for (std::size_t m = 0; m < u.size(); ++m) u[m] = rng.uniform_open() - 0.5;
        Vec c = laplace_inverse_transform(u, b_vis);
        Vec eps(hp.latent_dim);
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();

        Vec anchor_scaled = s * encode(model, model.anchors.anchors[ai]);
        Vec z_scaled = apply_transport(model.dictionary, c, anchor_scaled);
        for (std::size_t i = 0; i < z_scaled.size(); ++i)
            z_scaled[i] += gamma_vis * eps[i];
        PriorSample sample;
        sample.z = (1.0 / s) * z_scaled;
        sample.anchor_index = ai;
        out.push_back(std::move(sample));
    }
    return out;
}

struct DiagnosticsSummary {
    long psi_steps = 0;
    long psi_rejected = 0;
    double rejected_fraction = 0.0;
    double mean_infer_iterations = 0.0;
    double p95_infer_iterations = 0.0;
    double mean_step_seconds = 0.0;
    double p95_step_seconds = 0.0;
    std::vector<double> final_psi_fro;
    bool suspect = false;  // rejected_fraction above one half
};

namespace detail {

inline double percentile95(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(values.size())));
    return values[std::min(rank == 0 ? 0 : rank - 1, values.size() - 1)];
}

}  // namespace detail

// Health signals of a training run: a high rejected fraction in the
// dictionary phase marks a run whose operators stopped improving.
inline DiagnosticsSummary training_diagnostics(const TrainingLog& log) {
    if (log.rows.empty()) throw config_error("training_diagnostics: empty log");
    DiagnosticsSummary out;
    std::vector<double> iters, seconds;
    for (const auto& row : log.rows) {
        if (row.phase == TrainPhase::psi) {
            ++out.psi_steps;
            if (row.psi_accepted == 0) ++out.psi_rejected;
        }
        if (row.infer_iters_mean > 0.0) iters.push_back(row.infer_iters_mean);
        seconds.push_back(row.wall_seconds);
    }
    if (out.psi_steps > 0)
        out.rejected_fraction = static_cast<double>(out.psi_rejected) /
                                static_cast<double>(out.psi_steps);
    if (!iters.empty()) {
        double sum = 0.0;
        for (double v : iters) sum += v;
        out.mean_infer_iterations = sum / static_cast<double>(iters.size());
        out.p95_infer_iterations = detail::percentile95(iters);
    }
    double ssum = 0.0;
    for (double v : seconds) ssum += v;
    out.mean_step_seconds = ssum / static_cast<double>(seconds.size());
    out.p95_step_seconds = detail::percentile95(seconds);
    out.final_psi_fro = log.rows.back().psi_fro;
    out.suspect = out.rejected_fraction > 0.5;
    return out;
}

inline void write_contour_csv(const ContourGrid& grid, const std::string& path) {
    CsvWriter w(path, {"z1", "z2", "fidelity", "sparsity", "total"});
    for (std::size_t i = 0; i < grid.spec.resolution1; ++i)
        for (std::size_t j = 0; j < grid.spec.resolution2; ++j) {
            const std::size_t c = grid.index(i, j);
            w.write_numeric_row({grid.z1_at(i), grid.z2_at(j), grid.fidelity[c],
                                 grid.sparsity[c], grid.total[c]});
        }
}

inline void write_metrics_csv(const std::vector<std::pair<std::string, double>>& metrics,
                              const std::string& path) {
    CsvWriter w(path, {"key", "value"});
    for (const auto& [key, value] : metrics) w.write_row({key, format_g17(value)});
}

}  // namespace vaells
