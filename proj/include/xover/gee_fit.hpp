#pragma once

// Marginal GLM fit by generalized estimating equations for complete
// crossover data, with moment estimates of the working correlation and the
// dispersion, model-based and sandwich standard errors, and Wald intervals.

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xover/correlation.hpp"
#include "xover/csv.hpp"
#include "xover/errors.hpp"
#include "xover/gee_variance.hpp"
#include "xover/model.hpp"
#include "xover/priors.hpp"

namespace xover {

struct SubjectRecord {
    std::string id;
    TreatmentSequence sequence;
    Vector responses;  // one per period
};

struct TrialDataset {
    CrossoverLayout layout;
    Family family = Family::poisson();
    std::vector<SubjectRecord> subjects;

    void validate() const {
        layout.validate();
        if (subjects.empty()) throw ValidationError("dataset has no subjects");
        for (const auto& s : subjects) {
            s.sequence.validate(layout);
            if (static_cast<std::size_t>(s.responses.size()) != layout.periods)
                throw ValidationError("subject " + s.id + " does not have one response per period");
            for (Eigen::Index i = 0; i < s.responses.size(); ++i) check_support(s.responses(i), s.id);
        }
    }

    void check_support(double y, const std::string& who) const {
        bool ok = std::isfinite(y);
        switch (family.kind) {
            case FamilyKind::bernoulli: ok = ok && (y == 0.0 || y == 1.0); break;
            case FamilyKind::poisson: ok = ok && y >= 0.0 && std::floor(y) == y; break;
            case FamilyKind::gamma: ok = ok && y > 0.0; break;
        }
        if (!ok)
            throw ValidationError("response " + csv::fmt(y) + " of subject " + who + " is outside the " +
                                  family.name() + " support");
    }
};

/// Reads the long format subject_id, sequence, period, response. Subjects
/// keep their order of first appearance. The family decides the support
/// check; layout.subjects is set from the data.
inline TrialDataset read_dataset(std::istream& in, CrossoverLayout layout, Family family,
                                 const std::string& source = "<dataset>") {
    const csv::Table t = csv::parse(in, source);
    const auto cid = t.column("subject_id"), cseq = t.column("sequence"), cper = t.column("period"),
               cres = t.column("response");
    TrialDataset data;
    data.family = family;
    data.layout = layout;
    std::map<std::string, std::size_t> index;
    std::vector<std::vector<bool>> seen;
    for (const auto& row : t.rows) {
        const std::string where = source + ":" + std::to_string(row.line);
        const std::string& id = row.fields[cid];
        TreatmentSequence seq;
        try {
            seq = TreatmentSequence::parse(row.fields[cseq]);
            seq.validate(layout);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        const long long period = csv::to_int(row.fields[cper], where);
        if (period < 1 || static_cast<std::size_t>(period) > layout.periods)
            throw ValidationError(where + ": period " + std::to_string(period) + " outside 1.." +
                                  std::to_string(layout.periods));
        const double y = csv::to_double(row.fields[cres], where);
        auto [it, inserted] = index.emplace(id, data.subjects.size());
        if (inserted) {
            data.subjects.push_back({id, seq, Vector::Constant(static_cast<Eigen::Index>(layout.periods), NAN)});
            seen.emplace_back(layout.periods, false);
        }
        auto& subj = data.subjects[it->second];
        if (!(subj.sequence == seq))
            throw ValidationError(where + ": subject " + id + " changes sequence");
        const auto pi = static_cast<std::size_t>(period - 1);
        if (seen[it->second][pi])
            throw ValidationError(where + ": duplicate period " + std::to_string(period) + " for subject " + id);
        seen[it->second][pi] = true;
        try {
            data.check_support(y, id);
        } catch (const ValidationError& e) {
            throw ValidationError(where + ": " + e.what());
        }
        subj.responses(static_cast<Eigen::Index>(pi)) = y;
    }
    for (std::size_t s = 0; s < data.subjects.size(); ++s)
        for (std::size_t p = 0; p < layout.periods; ++p)
            if (!seen[s][p])
                throw ValidationError(source + ": subject " + data.subjects[s].id + " is missing period " +
                                      std::to_string(p + 1));
    data.layout.subjects = data.subjects.size();
    data.validate();
    return data;
}

inline TrialDataset read_dataset_file(const std::string& path, CrossoverLayout layout, Family family) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    return read_dataset(in, layout, family, path);
}

inline void write_dataset(std::ostream& out, const TrialDataset& data) {
    out << "subject_id,sequence,period,response\n";
    for (const auto& s : data.subjects)
        for (Eigen::Index i = 0; i < s.responses.size(); ++i)
            out << s.id << ',' << s.sequence.str() << ',' << (i + 1) << ',' << csv::fmt(s.responses(i)) << '\n';
}

/// Moment estimate of alpha before clamping: the mean of r_i r_i' / phi over
/// subjects and period pairs (all pairs for CS, adjacent pairs for AR(1)).
/// `residuals` has one row per subject.
inline double estimate_alpha_unclamped(const Matrix& residuals, CorrelationStructure structure,
                                       double dispersion = 1.0) {
    if (residuals.cols() < 2) throw ValidationError("alpha estimation needs at least 2 periods");
    if (residuals.rows() < 2) throw ValidationError("alpha estimation needs at least 2 subjects");
    if (structure == CorrelationStructure::independent) return 0.0;
    const Eigen::Index p = residuals.cols();
    double total = 0.0;
    std::size_t count = 0;
    for (Eigen::Index j = 0; j < residuals.rows(); ++j)
        for (Eigen::Index a = 0; a < p; ++a)
            for (Eigen::Index b = a + 1; b < p; ++b) {
                if (structure == CorrelationStructure::ar1 && b != a + 1) continue;
                total += residuals(j, a) * residuals(j, b);
                ++count;
            }
    return total / static_cast<double>(count) / dispersion;
}

inline constexpr double kAlphaMargin = 1e-3;

/// estimate_alpha_unclamped clamped into the admissible interval shrunk by
/// 1e-3 on each side.
inline double estimate_alpha(const Matrix& residuals, CorrelationStructure structure, double dispersion = 1.0) {
    const double raw = estimate_alpha_unclamped(residuals, structure, dispersion);
    if (structure == CorrelationStructure::independent) return 0.0;
    const auto [lo, hi] = admissible_alpha(structure, static_cast<std::size_t>(residuals.cols()));
    return std::clamp(raw, lo + kAlphaMargin, hi - kAlphaMargin);
}

/// Pearson chi-square over residual degrees of freedom.
inline double estimate_dispersion(const Matrix& residuals, std::size_t parameters) {
    const auto total = static_cast<long long>(residuals.size());
    const long long df = total - static_cast<long long>(parameters);
    if (df <= 0)
        throw ValidationError("dispersion needs more residuals (" + std::to_string(total) + ") than parameters (" +
                              std::to_string(parameters) + ")");
    return residuals.squaredNorm() / static_cast<double>(df);
}

enum class FitStatus { converged, max_iterations, separation, divergence };

inline std::string to_string(FitStatus s) {
    switch (s) {
        case FitStatus::converged: return "converged";
        case FitStatus::max_iterations: return "max_iterations";
        case FitStatus::separation: return "separation";
        case FitStatus::divergence: return "divergence";
    }
    return "?";
}

struct FitResult {
    ParamVector theta_hat;
    double alpha_hat = 0.0;
    double dispersion_hat = 1.0;
    Vector model_se;
    Vector sandwich_se;
    Vector ci_low;
    Vector ci_high;
    Matrix model_variance;
    Matrix sandwich_variance;
    std::size_t iterations = 0;
    bool converged = false;
    FitStatus status = FitStatus::max_iterations;
    double estimating_equation_norm = 0.0;
};

struct FitOptions {
    std::size_t max_iterations = 50;
    double tolerance = 1e-8;  // on max |delta theta|
    double z = 1.96;
};

namespace detail {

/// Per-subject quantities at the current theta, on the unit-variance scale:
/// sx = S X with S = diag(dmu/deta / sqrt(v(mu))), r = (y - mu)/sqrt(v(mu)).
struct SubjectTerms {
    Matrix sx;
    Vector r;
    double max_abs_eta = 0.0;
};

inline double unit_variance(FamilyKind kind, double mu) {
    switch (kind) {
        case FamilyKind::bernoulli: return mu * (1.0 - mu);
        case FamilyKind::poisson: return mu;
        case FamilyKind::gamma: return mu * mu;
    }
    return 1.0;
}

inline SubjectTerms subject_terms(const Matrix& x, const Vector& y, const ParamVector& theta, const ModelSpec& spec) {
    SubjectTerms t;
    const Vector eta = x * theta;
    t.sx = x;
    t.r.resize(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        t.max_abs_eta = std::max(t.max_abs_eta, std::abs(eta(i)));
        const double mu = mean_response(spec, eta(i));
        const double v = std::max(unit_variance(spec.family.kind, mu), 1e-300);
        const double sd = std::sqrt(v);
        t.sx.row(i) *= mu_eta_derivative(spec, eta(i)) / sd;
        t.r(i) = (y(i) - mu) / sd;
    }
    return t;
}

struct GeeSums {
    Matrix bread;  // sum (SX)' R^{-1} (SX)
    Matrix meat;   // sum (SX)' R^{-1} r r' R^{-1} (SX)
    Vector score;  // sum (SX)' R^{-1} r
    Matrix residuals;
    double max_abs_eta = 0.0;
};

inline GeeSums gee_sums(const TrialDataset& data, const std::vector<Matrix>& x, const ParamVector& theta,
                        const ModelSpec& spec, const Eigen::LLT<Matrix>& r_llt) {
    const auto m = theta.size();
    GeeSums s{Matrix::Zero(m, m), Matrix::Zero(m, m), Vector::Zero(m),
              Matrix(static_cast<Eigen::Index>(data.subjects.size()), static_cast<Eigen::Index>(data.layout.periods)),
              0.0};
    for (std::size_t j = 0; j < data.subjects.size(); ++j) {
        const SubjectTerms t = subject_terms(x[j], data.subjects[j].responses, theta, spec);
        const Matrix g = r_llt.solve(t.sx);
        const Vector u = g.transpose() * t.r;
        s.bread.noalias() += t.sx.transpose() * g;
        s.meat.noalias() += u * u.transpose();
        s.score += u;
        s.residuals.row(static_cast<Eigen::Index>(j)) = t.r.transpose();
        s.max_abs_eta = std::max(s.max_abs_eta, t.max_abs_eta);
    }
    s.bread = symmetrized(s.bread);
    return s;
}

inline double link_of_mean(const ModelSpec& spec, double ybar) {
    if (spec.link() == Link::logit) {
        const double p = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
        return std::log(p / (1.0 - p));
    }
    return std::log(std::max(ybar, 1e-6));
}

}  // namespace detail

/// GEE fit. Starts from the independence fit (alpha = 0), then alternates
/// Fisher scoring with moment updates of alpha and the dispersion until
/// max |delta theta| < tolerance. Rank-deficient designs throw; separation
/// and divergence return a flagged partial result.
inline FitResult fit(const TrialDataset& data, const ModelSpec& spec, CorrelationStructure structure,
                     const FitOptions& options = {}) {
    data.validate();
    if (spec.family.kind != data.family.kind)
        throw ValidationError("model family " + spec.family.name() + " does not match dataset family " +
                              data.family.name());
    const CrossoverLayout& layout = data.layout;
    const std::size_t m = parameter_count(layout, spec);

    std::vector<Matrix> x;
    x.reserve(data.subjects.size());
    for (const auto& s : data.subjects) x.push_back(build_design_matrix(s.sequence, layout, spec));
    {
        Matrix stacked(static_cast<Eigen::Index>(x.size() * layout.periods), static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < x.size(); ++j)
            stacked.middleRows(static_cast<Eigen::Index>(j * layout.periods), static_cast<Eigen::Index>(layout.periods)) = x[j];
        Eigen::ColPivHouseholderQR<Matrix> qr(stacked);
        if (static_cast<std::size_t>(qr.rank()) < m)
            throw NonEstimableError("design matrix of the observed sequences is rank deficient",
                                    static_cast<std::size_t>(qr.rank()), m);
    }

    FitResult res;
    res.theta_hat = ParamVector::Zero(static_cast<Eigen::Index>(m));
    double ybar = 0.0;
    for (const auto& s : data.subjects) ybar += s.responses.sum();
    ybar /= static_cast<double>(data.subjects.size() * layout.periods);
    res.theta_hat(0) = detail::link_of_mean(spec, ybar);

    if (spec.family.kind == FamilyKind::bernoulli && (ybar == 0.0 || ybar == 1.0)) {
        res.status = FitStatus::separation;
        return res;
    }

    const bool is_gamma = spec.family.kind == FamilyKind::gamma;
    CorrelationKind kind = CorrelationKind::independent();
    bool independence_phase = true;
    std::size_t it = 0;
    detail::GeeSums sums;
    for (; it < options.max_iterations; ++it) {
        const auto r_llt = detail::factor_correlation(kind, layout.periods);
        sums = detail::gee_sums(data, x, res.theta_hat, spec, r_llt);
        Eigen::LLT<Matrix> bl(sums.bread);
        if (bl.info() != Eigen::Success) {
            res.status = FitStatus::divergence;
            break;
        }
        const Vector delta = bl.solve(sums.score);
        if (!delta.allFinite()) {
            res.status = FitStatus::divergence;
            break;
        }
        res.theta_hat += delta;
        if (spec.family.kind == FamilyKind::bernoulli && res.theta_hat.cwiseAbs().maxCoeff() > 30.0) {
            res.status = FitStatus::separation;
            break;
        }
        const bool small = delta.cwiseAbs().maxCoeff() < options.tolerance;
        if (small && independence_phase && structure != CorrelationStructure::independent) {
            independence_phase = false;
        } else if (small) {
            res.status = FitStatus::converged;
            ++it;
            break;
        }
        if (!independence_phase) {
            // Moment updates at the new theta.
            const auto rr = detail::factor_correlation(kind, layout.periods);
            const detail::GeeSums cur = detail::gee_sums(data, x, res.theta_hat, spec, rr);
            const double phi = is_gamma ? estimate_dispersion(cur.residuals, m) : 1.0;
            kind = CorrelationKind{structure, estimate_alpha(cur.residuals, structure, phi)};
        }
    }
    res.iterations = it;
    res.converged = res.status == FitStatus::converged;

    // Final quantities at theta_hat with the final alpha.
    const auto r_llt = detail::factor_correlation(kind, layout.periods);
    sums = detail::gee_sums(data, x, res.theta_hat, spec, r_llt);
    res.dispersion_hat = estimate_dispersion(sums.residuals, m);
    res.alpha_hat = estimate_alpha(sums.residuals, structure, is_gamma ? res.dispersion_hat : 1.0);
    res.estimating_equation_norm = sums.score.norm();
    if (!res.theta_hat.allFinite()) {
        res.status = FitStatus::divergence;
        res.converged = false;
        return res;
    }
    try {
        const Matrix bread_inv = invert_information(sums.bread);
        const double phi = is_gamma ? res.dispersion_hat : 1.0;
        res.model_variance = phi * bread_inv;
        res.sandwich_variance = symmetrized(bread_inv * sums.meat * bread_inv);
        res.model_se = res.model_variance.diagonal().cwiseSqrt();
        res.sandwich_se = res.sandwich_variance.diagonal().cwiseSqrt();
        res.ci_low = res.theta_hat - options.z * res.sandwich_se;
        res.ci_high = res.theta_hat + options.z * res.sandwich_se;
    } catch (const NonEstimableError&) {
        res.status = spec.family.kind == FamilyKind::bernoulli ? FitStatus::separation : FitStatus::divergence;
        res.converged = false;
    }
    return res;
}

/// The fit as an estimate table (parameter, estimate, ci_low, ci_high) that
/// prior_from_ci_table accepts directly.
inline std::vector<EstimateRow> estimate_table(const FitResult& fr, const CrossoverLayout& layout,
                                               const ModelSpec& spec) {
    const auto names = parameter_names(layout, spec);
    std::vector<EstimateRow> out;
    for (std::size_t k = 0; k < names.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        out.push_back({names[k], fr.theta_hat(kk), fr.ci_low(kk), fr.ci_high(kk)});
    }
    return out;
}

}  // namespace xover
