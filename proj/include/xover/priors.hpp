#pragma once

// Priors on theta, Latin hypercube samples from them, the prior-averaged
// criterion Psi and D-efficiency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "xover/csv.hpp"
#include "xover/gee_variance.hpp"

namespace xover {

/// Independent uniform prior on the box [lower, upper].
struct UniformBox {
    Vector lower;
    Vector upper;
};

/// Independent normal prior with a common variance.
struct IndependentNormal {
    Vector mean;
    double variance = 0.25;
};

using PriorSpec = std::variant<UniformBox, IndependentNormal>;

inline std::size_t prior_dimension(const PriorSpec& prior) {
    return std::visit(
        [](const auto& p) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(p)>, UniformBox>)
                return static_cast<std::size_t>(p.lower.size());
            else
                return static_cast<std::size_t>(p.mean.size());
        },
        prior);
}

inline void validate_prior(const PriorSpec& prior) {
    if (const auto* box = std::get_if<UniformBox>(&prior)) {
        if (box->lower.size() != box->upper.size() || box->lower.size() == 0)
            throw ValidationError("uniform prior bounds must be non-empty and of equal length");
        for (Eigen::Index k = 0; k < box->lower.size(); ++k)
            if (!(box->lower(k) < box->upper(k)))
                throw ValidationError("uniform prior interval " + std::to_string(k) + " is empty: [" +
                                      std::to_string(box->lower(k)) + ", " + std::to_string(box->upper(k)) + "]");
    } else {
        const auto& n = std::get<IndependentNormal>(prior);
        if (n.mean.size() == 0) throw ValidationError("normal prior mean is empty");
        if (!(n.variance > 0.0)) throw ValidationError("normal prior variance must be positive");
    }
}

enum class SampleMethod { lhs_uniform, lhs_normal };

/// A fixed set of prior draws, shared by every design evaluated in one
/// experiment.
struct PriorSample {
    std::vector<ParamVector> points;
    std::uint64_t seed = 0;
    SampleMethod method = SampleMethod::lhs_uniform;

    std::size_t size() const noexcept { return points.size(); }

    static PriorSample single(ParamVector theta) {
        PriorSample s;
        s.points.push_back(std::move(theta));
        return s;
    }
};

/// Latin hypercube sample: in every coordinate the N points occupy the N
/// equal-probability strata once each, with uniform jitter inside a stratum
/// and an independent random stratum order per coordinate.
inline PriorSample lhs_sample(const PriorSpec& prior, std::size_t count, std::uint64_t seed) {
    validate_prior(prior);
    if (count < 1) throw ValidationError("LHS size must be >= 1");
    const std::size_t dim = prior_dimension(prior);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // u(i, k): stratified uniforms.
    std::vector<std::vector<double>> u(count, std::vector<double>(dim));
    std::vector<std::size_t> order(count);
    for (std::size_t k = 0; k < dim; ++k) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t i = 0; i < count; ++i) {
            double v = (static_cast<double>(order[i]) + unit(rng)) / static_cast<double>(count);
            u[i][k] = std::clamp(v, 0.0, std::nextafter(1.0, 0.0));
        }
    }

    PriorSample out;
    out.seed = seed;
    out.points.assign(count, ParamVector(static_cast<Eigen::Index>(dim)));
    if (const auto* box = std::get_if<UniformBox>(&prior)) {
        out.method = SampleMethod::lhs_uniform;
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t k = 0; k < dim; ++k) {
                const auto kk = static_cast<Eigen::Index>(k);
                out.points[i](kk) = box->lower(kk) + u[i][k] * (box->upper(kk) - box->lower(kk));
            }
    } else {
        const auto& nrm = std::get<IndependentNormal>(prior);
        out.method = SampleMethod::lhs_normal;
        const boost::math::normal_distribution<double> z(0.0, 1.0);
        const double sd = std::sqrt(nrm.variance);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t k = 0; k < dim; ++k) {
                const double q = std::clamp(u[i][k], 1e-300, 1.0 - 1e-16);
                out.points[i](static_cast<Eigen::Index>(k)) =
                    nrm.mean(static_cast<Eigen::Index>(k)) + sd * boost::math::quantile(z, q);
            }
    }
    return out;
}

/// One row of a point-estimate / confidence-interval table.
struct EstimateRow {
    std::string parameter;
    double estimate = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct PriorKind {
    enum class Shape { uniform, normal } shape = Shape::uniform;
    double variance = 0.25;  // normal only

    static PriorKind uniform() { return {}; }
    static PriorKind normal(double variance) { return {Shape::normal, variance}; }
};

/// Uniform: the product of the confidence intervals. Normal: centered at the
/// point estimates with the given common variance.
inline PriorSpec prior_from_ci_table(const std::vector<EstimateRow>& table, const PriorKind& kind) {
    if (table.empty()) throw ValidationError("prior table is empty");
    const auto m = static_cast<Eigen::Index>(table.size());
    Vector est(m), lo(m), hi(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& r = table[static_cast<std::size_t>(k)];
        if (!(r.ci_low < r.ci_high))
            throw ValidationError("confidence interval for " + r.parameter + " is empty: [" +
                                  std::to_string(r.ci_low) + ", " + std::to_string(r.ci_high) + "]");
        est(k) = r.estimate;
        lo(k) = r.ci_low;
        hi(k) = r.ci_high;
    }
    PriorSpec out;
    if (kind.shape == PriorKind::Shape::uniform)
        out = UniformBox{lo, hi};
    else
        out = IndependentNormal{est, kind.variance};
    validate_prior(out);
    return out;
}

/// Reads a table with columns parameter, estimate, ci_low, ci_high (extra
/// columns are ignored). Rows are taken in file order.
inline std::vector<EstimateRow> read_estimate_table(const std::string& path) {
    const csv::Table t = csv::read_file(path);
    const auto cp = t.column("parameter"), ce = t.column("estimate"), cl = t.column("ci_low"),
               ch = t.column("ci_high");
    std::vector<EstimateRow> out;
    for (const auto& row : t.rows) {
        const std::string where = path + ":" + std::to_string(row.line);
        out.push_back({row.fields[cp], csv::to_double(row.fields[ce], where), csv::to_double(row.fields[cl], where),
                       csv::to_double(row.fields[ch], where)});
    }
    return out;
}

/// Psi: Lambda averaged over the prior sample, summed in sample order.
inline double bayes_objective(const ApproxDesign& design, const PriorSample& sample, const ModelSpec& spec,
                              const CorrelationKind& kind, const CrossoverLayout& layout, double n = 1.0) {
    if (sample.points.empty()) throw ValidationError("prior sample is empty");
    double total = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        try {
            total += d_criterion(design, sample.points[i], spec, kind, layout, n);
        } catch (const NonEstimableError& e) {
            throw NonEstimableError("design non-estimable at prior point " + std::to_string(i), e.rank(), e.dim());
        }
    }
    return total / static_cast<double>(sample.size());
}

struct EfficiencyReport {
    double psi_candidate = 0.0;
    double psi_reference = 0.0;
    /// (Psi_ref / Psi_cand)^{1/m}; empty when the ratio is undefined or negative.
    std::optional<double> eff_paper;
    /// exp((Psi_ref - Psi_cand) / (t - 1)).
    double eff_log = 1.0;
};

/// Both efficiency forms from two objective values. `m` is the number of
/// coded parameters, `q` the number of direct-effect contrasts.
inline EfficiencyReport efficiency_from_objectives(double psi_reference, double psi_candidate, std::size_t m,
                                                   std::size_t q) {
    EfficiencyReport r;
    r.psi_candidate = psi_candidate;
    r.psi_reference = psi_reference;
    if (psi_candidate != 0.0) {
        const double ratio = psi_reference / psi_candidate;
        if (ratio >= 0.0 && std::isfinite(ratio)) r.eff_paper = std::pow(ratio, 1.0 / static_cast<double>(m));
    }
    r.eff_log = std::exp((psi_reference - psi_candidate) / static_cast<double>(q));
    return r;
}

inline EfficiencyReport d_efficiency(const ApproxDesign& candidate, const ApproxDesign& reference,
                                     const PriorSample& sample, const ModelSpec& spec, const CorrelationKind& kind,
                                     const CrossoverLayout& layout, double n = 1.0) {
    const double psi_c = bayes_objective(candidate, sample, spec, kind, layout, n);
    const double psi_r = bayes_objective(reference, sample, spec, kind, layout, n);
    return efficiency_from_objectives(psi_r, psi_c, parameter_count(layout, spec), layout.treatments - 1);
}

}  // namespace xover
