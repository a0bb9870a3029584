#pragma once

// Simulation of correlated crossover trial data with exact marginal
// distributions (normal copula), and an empirical check of the design
// variance formulas against repeated GEE fits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

#include "xover/gee_fit.hpp"

namespace xover {

struct SimConfig {
    CrossoverLayout layout;  // layout.subjects is the trial size
    ModelSpec spec;
    ParamVector theta;
    ApproxDesign design;
    CorrelationKind truth = CorrelationKind::independent();
    std::uint64_t seed = 0;
    /// Correlation of the latent normals. When empty, truth.alpha is used
    /// directly, which gives a somewhat weaker correlation on the response
    /// scale for discrete families.
    std::optional<double> latent_alpha;

    void validate() const {
        layout.validate();
        if (layout.subjects < 1) throw ValidationError("simulation needs at least 1 subject");
        design.validate(layout);
        if (static_cast<std::size_t>(theta.size()) != parameter_count(layout, spec))
            throw ValidationError("simulation theta has length " + std::to_string(theta.size()) + ", model needs " +
                                  std::to_string(parameter_count(layout, spec)));
        truth.validate(layout.periods);
        if (latent_alpha) CorrelationKind{truth.structure, *latent_alpha}.validate(layout.periods);
    }

    CorrelationKind latent_kind() const {
        return latent_alpha ? CorrelationKind{truth.structure, *latent_alpha} : truth;
    }
};

/// Integer subject counts for n subjects by largest remainder. Ties go to the
/// higher weight, then to the earlier sequence.
inline std::vector<std::size_t> allocate_subjects(const std::vector<double>& weights, std::size_t n) {
    std::vector<std::size_t> counts(weights.size(), 0);
    std::vector<double> rem(weights.size());
    std::size_t used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = weights[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        rem[i] = exact - static_cast<double>(counts[i]);
        used += counts[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (rem[a] != rem[b]) return rem[a] > rem[b];
        return weights[a] > weights[b];
    });
    for (std::size_t k = 0; used < n; ++k, ++used) ++counts[order[k % order.size()]];
    return counts;
}

/// Marginal quantile function of the response at mean mu.
inline double response_quantile(const ModelSpec& spec, double mu, double u) {
    switch (spec.family.kind) {
        case FamilyKind::bernoulli: return u > 1.0 - mu ? 1.0 : 0.0;
        case FamilyKind::poisson: {
            // Inverse CDF by summing the pmf; mu stays moderate under the clamp
            // of the linear predictor used in practice.
            double p = std::exp(-mu), cdf = p;
            double k = 0.0;
            while (u > cdf && k < 1e7) {
                k += 1.0;
                p *= mu / k;
                cdf += p;
                if (p == 0.0 && k > mu) break;
            }
            return k;
        }
        case FamilyKind::gamma: {
            const double shape = spec.family.shape;
            const boost::math::gamma_distribution<double> g(shape, mu / shape);
            return boost::math::quantile(g, std::clamp(u, 1e-300, 1.0 - 1e-16));
        }
    }
    return 0.0;
}

namespace detail {

/// Draws responses for counts[s] subjects on design sequence s from
/// standard normals produced by `rng`.
inline TrialDataset draw_trial(const SimConfig& cfg, const std::vector<std::size_t>& counts, const Matrix& chol,
                               std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    const boost::math::normal_distribution<double> phi(0.0, 1.0);
    const auto p = static_cast<Eigen::Index>(cfg.layout.periods);
    TrialDataset data;
    data.layout = cfg.layout;
    data.family = cfg.spec.family;
    std::size_t id = 0;
    for (std::size_t s = 0; s < cfg.design.size(); ++s) {
        const Matrix x = build_design_matrix(cfg.design.sequences[s], cfg.layout, cfg.spec);
        const Vector eta = x * cfg.theta;
        for (std::size_t j = 0; j < counts[s]; ++j) {
            Vector e(p);
            for (Eigen::Index i = 0; i < p; ++i) e(i) = z(rng);
            const Vector latent = chol * e;
            Vector y(p);
            for (Eigen::Index i = 0; i < p; ++i) {
                const double u = boost::math::cdf(phi, latent(i));
                y(i) = response_quantile(cfg.spec, mean_response(cfg.spec, eta(i)), u);
            }
            data.subjects.push_back({std::to_string(++id), cfg.design.sequences[s], y});
        }
    }
    data.layout.subjects = data.subjects.size();
    return data;
}

inline Matrix latent_cholesky(const CorrelationKind& kind, std::size_t periods) {
    Eigen::LLT<Matrix> llt(working_correlation(kind, periods));
    if (llt.info() != Eigen::Success) throw NumericalError("latent correlation is not positive definite");
    return llt.matrixL();
}

}  // namespace detail

/// One simulated trial. Identical configs (including the seed) give
/// identical datasets.
inline TrialDataset simulate_trial(const SimConfig& cfg) {
    cfg.validate();
    const auto counts = allocate_subjects(cfg.design.weights, cfg.layout.subjects);
    std::mt19937_64 rng(cfg.seed);
    return detail::draw_trial(cfg, counts, detail::latent_cholesky(cfg.latent_kind(), cfg.layout.periods), rng);
}

/// Moment estimate of the response-scale correlation (the quantity GEE
/// estimates) for a latent alpha, from about `draws` subjects spread evenly
/// over the design sequences, with standardized residuals at the true means.
inline double response_correlation(const SimConfig& cfg, double latent_alpha, std::size_t draws,
                                   std::uint64_t seed) {
    SimConfig c = cfg;
    c.latent_alpha = latent_alpha;
    const std::vector<std::size_t> counts(c.design.size(), std::max<std::size_t>(1, draws / c.design.size()));
    std::mt19937_64 rng(seed);
    const TrialDataset d = detail::draw_trial(c, counts, detail::latent_cholesky(c.latent_kind(), c.layout.periods), rng);
    const auto p = static_cast<Eigen::Index>(c.layout.periods);
    Matrix r(static_cast<Eigen::Index>(d.subjects.size()), p);
    for (std::size_t j = 0; j < d.subjects.size(); ++j) {
        const Vector eta = build_design_matrix(d.subjects[j].sequence, c.layout, c.spec) * c.theta;
        for (Eigen::Index i = 0; i < p; ++i) {
            const double mu = mean_response(c.spec, eta(i));
            r(static_cast<Eigen::Index>(j), i) = (d.subjects[j].responses(i) - mu) / std::sqrt(variance_function(c.spec, mu));
        }
    }
    return estimate_alpha_unclamped(r, c.truth.structure, 1.0);
}

/// Latent alpha whose response-scale correlation matches truth.alpha within
/// `tolerance`, by bisection with common random numbers. Throws when the
/// target is out of reach for these marginals.
inline double calibrate_latent_alpha(const SimConfig& cfg, double tolerance = 0.01,
                                     std::size_t draws = 40000, std::uint64_t seed = 12345) {
    cfg.validate();
    if (cfg.truth.structure == CorrelationStructure::independent) return 0.0;
    const double target = cfg.truth.alpha;
    const auto [lo_adm, hi_adm] = admissible_alpha(cfg.truth.structure, cfg.layout.periods);
    double lo = target >= 0.0 ? 0.0 : lo_adm + 1e-6;
    double hi = target >= 0.0 ? hi_adm - 1e-6 : 0.0;
    auto f = [&](double a) { return response_correlation(cfg, a, draws, seed) - target; };
    double flo = f(lo), fhi = f(hi);
    if (flo > tolerance || fhi < -tolerance)
        throw NumericalError("response correlation " + std::to_string(target) +
                             " is not attainable with these marginals");
    double mid = 0.5 * (lo + hi);
    for (int it = 0; it < 60; ++it) {
        mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if (std::abs(fm) <= tolerance * 0.25 || hi - lo < 1e-6) break;
        if (fm < 0.0) lo = mid; else hi = mid;
    }
    return mid;
}

/// The value the alpha moment estimator settles at when data follow `truth`
/// and the fit uses `working`: the average true correlation over the pairs
/// that the working structure pools.
inline double limiting_alpha(const CorrelationKind& truth, CorrelationStructure working, std::size_t periods) {
    if (working == CorrelationStructure::independent || periods < 2) return 0.0;
    const Matrix r = working_correlation(truth, periods);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < periods; ++a)
        for (std::size_t b = a + 1; b < periods; ++b) {
            if (working == CorrelationStructure::ar1 && b != a + 1) continue;
            total += r(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            ++count;
        }
    return total / static_cast<double>(count);
}

struct VarianceCheck {
    std::size_t replications = 0;
    std::size_t converged = 0;
    bool insufficient = false;  // too few converged fits for a stable comparison
    Matrix empirical;           // covariance of theta_hat over converged fits
    Matrix model_based;         // predicted, trial size n, realized allocation
    Matrix sandwich;
    Vector ratio_model;         // diag(empirical) / diag(model_based)
    Vector ratio_sandwich;
};

inline constexpr std::size_t kMinReplications = 30;
inline constexpr double kMaxFailureRate = 0.05;

/// Simulates `replications` trials (seed + r), fits each with the structure
/// of `working`, and compares the empirical covariance of the estimates with
/// the model-based variance under `working` and the sandwich variance under
/// the simulation truth, both for the realized allocation.
inline VarianceCheck empirical_variance_check(const SimConfig& cfg, const CorrelationKind& working,
                                              std::size_t replications) {
    cfg.validate();
    working.validate(cfg.layout.periods);
    if (replications < 1) throw ValidationError("replications must be >= 1");
    const std::size_t m = parameter_count(cfg.layout, cfg.spec);
    const auto counts = allocate_subjects(cfg.design.weights, cfg.layout.subjects);
    const Matrix chol = detail::latent_cholesky(cfg.latent_kind(), cfg.layout.periods);

    std::vector<ParamVector> estimates;
    for (std::size_t r = 0; r < replications; ++r) {
        std::mt19937_64 rng(cfg.seed + r);
        const TrialDataset d = detail::draw_trial(cfg, counts, chol, rng);
        try {
            const FitResult fr = fit(d, cfg.spec, working.structure);
            if (fr.converged) estimates.push_back(fr.theta_hat);
        } catch (const Error&) {
        }
    }

    VarianceCheck out;
    out.replications = replications;
    out.converged = estimates.size();
    const double failed = static_cast<double>(replications - estimates.size()) / static_cast<double>(replications);
    if (failed > kMaxFailureRate)
        throw NumericalError(std::to_string(replications - estimates.size()) + " of " + std::to_string(replications) +
                             " simulated fits did not converge");
    out.insufficient = estimates.size() < kMinReplications;

    ApproxDesign realized;
    for (std::size_t i = 0; i < counts.size(); ++i)
        if (counts[i] > 0) {
            realized.sequences.push_back(cfg.design.sequences[i]);
            realized.weights.push_back(static_cast<double>(counts[i]) / static_cast<double>(cfg.layout.subjects));
        }
    const double total = std::accumulate(realized.weights.begin(), realized.weights.end(), 0.0);
    for (double& w : realized.weights) w /= total;
    const double n = static_cast<double>(cfg.layout.subjects);
    out.model_based = model_based_variance(realized, cfg.theta, cfg.spec, working, cfg.layout, n);
    out.sandwich = sandwich_variance(realized, cfg.theta, cfg.spec, working, cfg.truth, cfg.layout, n);

    if (estimates.size() >= 2) {
        ParamVector mean = ParamVector::Zero(static_cast<Eigen::Index>(m));
        for (const auto& e : estimates) mean += e;
        mean /= static_cast<double>(estimates.size());
        out.empirical = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        for (const auto& e : estimates) out.empirical += (e - mean) * (e - mean).transpose();
        out.empirical /= static_cast<double>(estimates.size() - 1);
        out.ratio_model = out.empirical.diagonal().cwiseQuotient(out.model_based.diagonal());
        out.ratio_sandwich = out.empirical.diagonal().cwiseQuotient(out.sandwich.diagonal());
    }
    return out;
}

}  // namespace xover
