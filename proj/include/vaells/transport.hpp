#pragma once

// Dictionary of matrix transport operators acting on latent points through
// the matrix exponential, with sparse coefficient inference by nonlinear
// conjugate gradient, dictionary-side gradients, orbits, and path
// interpolation.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vaells/common.hpp"
#include "vaells/linalg.hpp"

namespace vaells {

struct TransportDictionary {
    std::size_t latent_dim = 0;
    std::vector<Mat> operators;  // each latent_dim x latent_dim

    std::size_t size() const { return operators.size(); }
};

// Entries drawn N(0, init_scale^2).
inline TransportDictionary make_dictionary(std::size_t latent_dim,
                                           std::size_t num_operators,
                                           double init_scale, Rng& rng) {
    TransportDictionary dict;
    dict.latent_dim = latent_dim;
    dict.operators.reserve(num_operators);
    for (std::size_t m = 0; m < num_operators; ++m) {
        Mat psi(latent_dim, latent_dim);
        for (std::size_t i = 0; i < psi.count(); ++i)
            psi.data()[i] = init_scale * rng.normal();
        dict.operators.push_back(std::move(psi));
    }
    return dict;
}

// A(c) = sum_m c_m Psi_m.
inline Mat weighted_generator(const TransportDictionary& dict, const Vec& c) {
    if (c.size() != dict.size())
        throw dim_error("weighted_generator: coefficient count mismatch");
    Mat a(dict.latent_dim, dict.latent_dim);
    for (std::size_t m = 0; m < dict.size(); ++m) {
        const Mat& psi = dict.operators[m];
        const double cm = c[m];
        if (cm == 0.0) continue;
        for (std::size_t i = 0; i < a.count(); ++i)
            a.data()[i] += cm * psi.data()[i];
    }
    return a;
}

inline Mat transform(const TransportDictionary& dict, const Vec& c) {
    return mat_exp(weighted_generator(dict, c));
}

inline Vec apply_transport(const TransportDictionary& dict, const Vec& c,
                           const Vec& z0) {
    if (z0.size() != dict.latent_dim)
        throw dim_error("apply_transport: point dimension mismatch");
    return matvec(transform(dict, c), z0);
}

struct InferenceSettings {
    double sparsity_weight = 1.0;
    double fidelity_weight = 1.0;
    int max_iterations = 300;
    double gradient_tolerance = 1e-6;
    int num_restarts = 1;
    double init_low = -0.1;
    double init_high = 0.1;
    double l1_smoothing = 1e-8;  // |c| optimized as sqrt(c^2 + l1_smoothing)
};

struct InferenceResult {
    Vec coeffs;
    double objective = 0.0;  // fidelity_weight*resid^2 + sparsity_weight*sum|c|
    int iterations = 0;      // accepted line-search steps over all restarts
};

namespace detail {

struct InferEval {
    double f;  // smoothed objective
    Vec grad;
};

inline double infer_objective(const TransportDictionary& dict, const Vec& c,
                              const Vec& z, const Vec& mu,
                              const InferenceSettings& s) {
    Vec r = z - matvec(transform(dict, c), mu);
    double f = s.fidelity_weight * norm2_sq(r);
    for (std::size_t m = 0; m < c.size(); ++m)
        f += s.sparsity_weight * std::sqrt(c[m] * c[m] + s.l1_smoothing);
    return f;
}

inline InferEval infer_objective_grad(const TransportDictionary& dict,
                                      const Vec& c, const Vec& z, const Vec& mu,
                                      const InferenceSettings& s) {
    const Mat a = weighted_generator(dict, c);
    Vec r = z - matvec(mat_exp(a), mu);
    InferEval ev;
    ev.f = s.fidelity_weight * norm2_sq(r);
    // d(resid^2)/dc_m = -2 <K, Psi_m> with K = L(A^T, r mu^T); one Frechet
    // call covers every dictionary element.
    const Mat k = mat_exp_frechet(transpose(a), outer(r, mu)).second;
    ev.grad = Vec(c.size());
    for (std::size_t m = 0; m < c.size(); ++m) {
        const double sm = std::sqrt(c[m] * c[m] + s.l1_smoothing);
        ev.f += s.sparsity_weight * sm;
        ev.grad[m] = -2.0 * s.fidelity_weight * frobenius_inner(k, dict.operators[m]) +
                     s.sparsity_weight * c[m] / sm;
    }
    return ev;
}

}  // namespace detail

// Minimizes fidelity_weight*||z - T(c) mu||^2 + sparsity_weight*sum|c_m| over
// the coefficients, best of num_restarts independent runs. Each restart draws
// exactly M initial coefficients from the rng (restarts in order, entries in
// index order), then runs Polak-Ribiere conjugate gradient with Armijo
// backtracking; the rest of the run consumes no randomness. The returned
// objective uses the exact L1 term, not its smoothed surrogate.
inline InferenceResult infer_coefficients(const TransportDictionary& dict,
                                          const Vec& z, const Vec& mu,
                                          const InferenceSettings& s, Rng& rng) {
    if (z.size() != dict.latent_dim || mu.size() != dict.latent_dim)
        throw dim_error("infer_coefficients: point dimension mismatch");
    const std::size_t num_ops = dict.size();

    InferenceResult best;
    bool have_best = false;
    int total_iters = 0;

    for (int restart = 0; restart < s.num_restarts; ++restart) {
        Vec c(num_ops);
        for (std::size_t m = 0; m < num_ops; ++m)
            c[m] = rng.uniform(s.init_low, s.init_high);

        auto ev = detail::infer_objective_grad(dict, c, z, mu, s);
        if (!std::isfinite(ev.f) || !all_finite(ev.grad))
            throw numeric_error("infer_coefficients: non-finite objective (restart " +
                                std::to_string(restart) + ")");
        Vec best_c = c;
        double best_f = ev.f;
        const double start_f = ev.f;
        Vec p = -1.0 * ev.grad;
        double alpha_prev = 1.0;
        // Conjugacy degrades under a backtracking-only line search; restart
        // on steepest descent every M accepted steps (Powell rule).
        const int restart_period = static_cast<int>(num_ops);
        int since_reset = 0;
        int stalled = 0;

        for (int iter = 0; iter < s.max_iterations; ++iter) {
            if (norm2(ev.grad) < s.gradient_tolerance) break;
            double slope = dot(p, ev.grad);
            if (slope >= 0.0) {  // not a descent direction: restart on steepest
                p = -1.0 * ev.grad;
                slope = -norm2_sq(ev.grad);
                since_reset = 0;
            }
            // Step sizes carry over between iterations and may grow without a
            // fixed cap; a flat objective needs steps far beyond unit length.
            // Non-finite trial values act as line-search rejections.
            double alpha = std::min(1e8, 2.0 * alpha_prev);
            bool accepted = false;
            Vec c_trial;
            double f_trial = 0.0;
            auto try_step = [&](double a) {
                Vec ct = c;
                for (std::size_t m = 0; m < num_ops; ++m) ct[m] += a * p[m];
                const double ft = detail::infer_objective(dict, ct, z, mu, s);
                return std::pair<Vec, double>(std::move(ct), ft);
            };
            int half = 0;
            for (; half < 60; ++half) {
                auto [ct, ft] = try_step(alpha);
                if (ft <= ev.f + 1e-4 * alpha * slope) {
                    accepted = true;
                    c_trial = std::move(ct);
                    f_trial = ft;
                    break;
                }
                alpha *= 0.5;
            }
            if (!accepted) break;
            // Parabolic polish: f(0), the slope, and f(alpha) fix a 1-D
            // quadratic model along p; jumping to its vertex replaces many
            // halving or growth rounds when the landscape is locally convex.
            const double quad_denom = 2.0 * (f_trial - ev.f - slope * alpha);
            if (quad_denom > 0.0) {
                const double alpha_q = -slope * alpha * alpha / quad_denom;
                if (std::isfinite(alpha_q) && alpha_q > 0.0) {
                    auto [ct, ft] = try_step(alpha_q);
                    if (ft < f_trial) {
                        alpha = alpha_q;
                        c_trial = std::move(ct);
                        f_trial = ft;
                    }
                }
            }
            // The Armijo constant is loose enough to accept steps that
            // overshoot the minimum along p; keep halving while that
            // strictly improves the objective (each smaller step satisfies
            // its own Armijo bound a fortiori).
            for (; half < 60; ++half) {
                auto [ct, ft] = try_step(0.5 * alpha);
                if (!(ft < f_trial)) break;
                alpha *= 0.5;
                c_trial = std::move(ct);
                f_trial = ft;
            }
            alpha_prev = alpha;
            ++total_iters;

            // Accepted steps whose improvements are negligible against the
            // objective scale, or against the total decrease this restart has
            // achieved, cannot add up to anything meaningful; three in a row
            // end the restart even when the gradient norm is still above
            // tolerance. The second gate matters when a sparsity term far
            // smaller than the fidelity term leaves a nearly flat valley of
            // exact fits: the iterates crawl along it at a constant rate that
            // would never trip a fixed threshold.
            const double stall_gate =
                std::max(1e-11 * (1.0 + std::abs(f_trial)),
                         1e-7 * (start_f - f_trial));
            if (ev.f - f_trial <= stall_gate) {
                if (++stalled >= 3) {
                    c = std::move(c_trial);
                    if (f_trial < best_f) {
                        best_f = f_trial;
                        best_c = c;
                    }
                    break;
                }
            } else {
                stalled = 0;
            }

            const Vec g_old = ev.grad;
            c = c_trial;
            ev = detail::infer_objective_grad(dict, c, z, mu, s);
            ev.f = f_trial;  // identical point; reuse the line-search value
            if (!all_finite(ev.grad))
                throw numeric_error("infer_coefficients: non-finite gradient (restart " +
                                    std::to_string(restart) + ")");
            if (ev.f < best_f) {
                best_f = ev.f;
                best_c = c;
            }
            ++since_reset;
            const double denom = norm2_sq(g_old);
            double beta = 0.0;
            if (since_reset < restart_period && denom > 0.0 &&
                std::abs(dot(ev.grad, g_old)) <= 0.2 * norm2_sq(ev.grad))
                beta = std::max(0.0, (norm2_sq(ev.grad) - dot(ev.grad, g_old)) / denom);
            if (beta == 0.0) since_reset = 0;
            for (std::size_t m = 0; m < num_ops; ++m)
                p[m] = -ev.grad[m] + beta * p[m];
        }

        // Exact-L1 objective for cross-restart comparison and the caller.
        Vec resid = z - matvec(transform(dict, best_c), mu);
        double exact = s.fidelity_weight * norm2_sq(resid);
        for (std::size_t m = 0; m < num_ops; ++m)
            exact += s.sparsity_weight * std::abs(best_c[m]);
        if (!have_best || exact < best.objective) {
            have_best = true;
            best.coeffs = best_c;
            best.objective = exact;
        }
    }
    best.iterations = total_iters;
    return best;
}

// Gradient of fidelity_weight*||z - T(c) mu||^2 with respect to each
// dictionary element, with the coefficients held fixed.
inline std::vector<Mat> dictionary_gradient(const TransportDictionary& dict,
                                            const Vec& c, const Vec& z,
                                            const Vec& mu,
                                            double fidelity_weight) {
    if (z.size() != dict.latent_dim || mu.size() != dict.latent_dim)
        throw dim_error("dictionary_gradient: point dimension mismatch");
    const Mat a = weighted_generator(dict, c);
    Vec r = z - matvec(mat_exp(a), mu);
    const Mat k = mat_exp_frechet(transpose(a), outer(r, mu)).second;
    std::vector<Mat> grads;
    grads.reserve(dict.size());
    for (std::size_t m = 0; m < dict.size(); ++m)
        grads.push_back((-2.0 * fidelity_weight * c[m]) * k);
    return grads;
}

inline std::pair<double, std::vector<Mat>> frobenius_penalty(
    const TransportDictionary& dict, double eta) {
    double value = 0.0;
    std::vector<Mat> grads;
    grads.reserve(dict.size());
    for (const Mat& psi : dict.operators) {
        const double fro = frobenius_norm(psi);
        value += 0.5 * eta * fro * fro;
        grads.push_back(eta * psi);
    }
    return {value, std::move(grads)};
}

// Trajectory of a single dictionary element: point t is
// expm(Psi_m * time_scale * t / num_steps) z0 for t = 0..num_steps.
inline std::vector<Vec> orbit(const TransportDictionary& dict,
                              std::size_t operator_index, const Vec& z0,
                              int num_steps, double time_scale = 1.0) {
    if (operator_index >= dict.size())
        throw dim_error("orbit: operator index out of range");
    if (z0.size() != dict.latent_dim)
        throw dim_error("orbit: point dimension mismatch");
    if (num_steps < 1) throw dim_error("orbit: need at least one step");
    std::vector<Vec> points;
    points.reserve(static_cast<std::size_t>(num_steps) + 1);
    points.push_back(z0);
    const Mat& psi = dict.operators[operator_index];
    for (int t = 1; t <= num_steps; ++t) {
        const double scale = time_scale * t / num_steps;
        points.push_back(matvec(mat_exp(scale * psi), z0));
    }
    return points;
}

// Geodesic-style path: point t is expm(A(c_star) * t / num_steps) z0, so the
// endpoint coincides with apply_transport(dict, c_star, z0).
inline std::vector<Vec> interpolate_path(const TransportDictionary& dict,
                                         const Vec& c_star, const Vec& z0,
                                         int num_steps) {
    if (z0.size() != dict.latent_dim)
        throw dim_error("interpolate_path: point dimension mismatch");
    if (num_steps < 1) throw dim_error("interpolate_path: need at least one step");
    const Mat a = weighted_generator(dict, c_star);
    std::vector<Vec> points;
    points.reserve(static_cast<std::size_t>(num_steps) + 1);
    points.push_back(z0);
    for (int t = 1; t <= num_steps; ++t)
        points.push_back(matvec(mat_exp((static_cast<double>(t) / num_steps) * a), z0));
    return points;
}

}  // namespace vaells
