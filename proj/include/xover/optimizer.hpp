#pragma once

// Minimization of the prior-averaged D-criterion over allocation weights.
//
// The criterion is convex in the design measure. Each iteration tries a
// Newton step on the current support (plus the most promising outside
// candidate) and falls back to a pairwise exchange step that moves weight
// from the worst support sequence to the best candidate with an exact line
// search. Optional multiplicative updates can precede both. Convergence is
// certified by the equivalence-theorem gap max_w d(w) - (t - 1).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "xover/gee_variance.hpp"
#include "xover/priors.hpp"

namespace xover {

struct OptimizerConfig {
    std::size_t max_iterations = 5000;
    double objective_tolerance = 1e-8;  // relative change that counts as a stall
    double gap_tolerance = 1e-7;
    double weight_prune_threshold = 1e-4;
    std::size_t restarts = 5;
    std::size_t multiplicative_steps = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_iterations == 0 || restarts == 0)
            throw ValidationError("optimizer: max_iterations and restarts must be positive");
        if (!(objective_tolerance > 0.0) || !(gap_tolerance > 0.0) || !(weight_prune_threshold > 0.0))
            throw ValidationError("optimizer: tolerances must be positive");
    }
};

struct OptimizationResult {
    ApproxDesign design;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    double optimality_gap = 0.0;
};

/// Per-subject sequence informations for every (prior point, candidate),
/// computed once and reused by every objective evaluation.
class BayesProblem {
   public:
    BayesProblem(std::vector<TreatmentSequence> candidates, const PriorSample& sample, ModelSpec spec,
                 CorrelationKind kind, CrossoverLayout layout)
        : candidates_(std::move(candidates)), spec_(spec), kind_(kind), layout_(layout) {
        if (candidates_.empty()) throw ValidationError("candidate list is empty");
        if (sample.points.empty()) throw ValidationError("prior sample is empty");
        layout_.validate();
        kind_.validate(layout_.periods);
        const auto llt = detail::factor_correlation(kind_, layout_.periods);
        std::vector<Matrix> designs;
        for (const auto& s : candidates_) designs.push_back(build_design_matrix(s, layout_, spec_));
        info_.resize(sample.size());
        for (std::size_t p = 0; p < sample.size(); ++p) {
            info_[p].reserve(candidates_.size());
            for (const auto& x : designs) {
                const Matrix sx = detail::scaled_design(x, sample.points[p], spec_);
                info_[p].push_back(symmetrized(sx.transpose() * llt.solve(sx)));
            }
        }
        lex_rank_.resize(candidates_.size());
        std::vector<std::size_t> order(candidates_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return candidates_[a] < candidates_[b]; });
        for (std::size_t r = 0; r < order.size(); ++r) lex_rank_[order[r]] = r;
    }

    std::size_t candidate_count() const { return candidates_.size(); }
    std::size_t point_count() const { return info_.size(); }
    std::size_t contrast_count() const { return layout_.treatments - 1; }
    const std::vector<TreatmentSequence>& candidates() const { return candidates_; }
    const CrossoverLayout& layout() const { return layout_; }
    const ModelSpec& spec() const { return spec_; }
    const CorrelationKind& kind() const { return kind_; }
    const Matrix& information(std::size_t point, std::size_t candidate) const { return info_[point][candidate]; }
    /// Position of a candidate in lexicographic sequence order.
    std::size_t lex_rank(std::size_t candidate) const { return lex_rank_[candidate]; }

    Matrix design_information(std::size_t point, const std::vector<double>& w) const {
        Matrix m = Matrix::Zero(info_[point][0].rows(), info_[point][0].cols());
        for (std::size_t i = 0; i < w.size(); ++i)
            if (w[i] != 0.0) m.noalias() += w[i] * info_[point][i];
        return m;
    }

    /// Psi at weights w (n = 1); +infinity when non-estimable somewhere.
    double objective(const std::vector<double>& w) const {
        double total = 0.0;
        for (std::size_t p = 0; p < info_.size(); ++p) {
            try {
                total += d_criterion_from_information(design_information(p, w), layout_, spec_);
            } catch (const NonEstimableError&) {
                return std::numeric_limits<double>::infinity();
            }
        }
        return total / static_cast<double>(info_.size());
    }

    /// Objective plus prior-averaged directional statistics d(w) for every
    /// candidate. Throws NonEstimableError naming the first failing point.
    double evaluate(const std::vector<double>& w, std::vector<double>& d) const {
        d.assign(candidates_.size(), 0.0);
        double total = 0.0;
        for (std::size_t p = 0; p < info_.size(); ++p) {
            CriterionState st;
            try {
                st = criterion_state(design_information(p, w), layout_, spec_);
            } catch (const NonEstimableError& e) {
                throw NonEstimableError("design non-estimable at prior point " + std::to_string(p), e.rank(),
                                        e.dim());
            }
            total += st.value;
            for (std::size_t i = 0; i < candidates_.size(); ++i)
                d[i] += st.sensitivity.cwiseProduct(info_[p][i]).sum();
        }
        const double np = static_cast<double>(info_.size());
        for (double& v : d) v /= np;
        return total / np;
    }

    /// Derivative of Psi along w + g (e_to - e_from), evaluated at the
    /// weights w_g. Returns +infinity when w_g is non-estimable.
    double pair_slope(const std::vector<double>& w_g, std::size_t to, std::size_t from, double* value) const {
        double slope = 0.0, total = 0.0;
        for (std::size_t p = 0; p < info_.size(); ++p) {
            CriterionState st;
            try {
                st = criterion_state(design_information(p, w_g), layout_, spec_);
            } catch (const NonEstimableError&) {
                if (value) *value = std::numeric_limits<double>::infinity();
                return std::numeric_limits<double>::infinity();
            }
            total += st.value;
            slope -= st.sensitivity.cwiseProduct(info_[p][to] - info_[p][from]).sum();
        }
        const double np = static_cast<double>(info_.size());
        if (value) *value = total / np;
        return slope / np;
    }

    /// Hessian of Psi with respect to the weights of `support`:
    /// H_ij = avg[2 tr(M^{-1} M_j G M_i) - tr(G M_j G M_i)].
    Matrix support_hessian(const std::vector<double>& w, const std::vector<std::size_t>& support) const {
        const auto s = static_cast<Eigen::Index>(support.size());
        Matrix h = Matrix::Zero(s, s);
        std::vector<Matrix> a(support.size()), b(support.size());
        for (std::size_t p = 0; p < info_.size(); ++p) {
            const Matrix info = design_information(p, w);
            const CriterionState st = criterion_state(info, layout_, spec_);
            const Matrix inv = invert_information(info);
            for (std::size_t i = 0; i < support.size(); ++i) {
                a[i].noalias() = inv * info_[p][support[i]];
                b[i].noalias() = st.sensitivity * info_[p][support[i]];
            }
            for (Eigen::Index i = 0; i < s; ++i)
                for (Eigen::Index j = 0; j <= i; ++j) {
                    const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
                    // tr(X Y) = sum(X .* Y')
                    const double v = 2.0 * a[uj].cwiseProduct(b[ui].transpose()).sum() -
                                     b[uj].cwiseProduct(b[ui].transpose()).sum();
                    h(i, j) += v;
                    if (i != j) h(j, i) += v;
                }
        }
        return h / static_cast<double>(info_.size());
    }

   private:
    std::vector<TreatmentSequence> candidates_;
    ModelSpec spec_;
    CorrelationKind kind_;
    CrossoverLayout layout_;
    std::vector<std::vector<Matrix>> info_;
    std::vector<std::size_t> lex_rank_;
};

namespace detail {

inline double simplex_gap(const std::vector<double>& d, std::size_t q) {
    return *std::max_element(d.begin(), d.end()) - static_cast<double>(q);
}

// Largest d among all candidates; exact ties go to the lexicographically
// smallest sequence.
inline std::size_t toward_index(const BayesProblem& pb, const std::vector<double>& d) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d.size(); ++i)
        if (d[i] > d[best] || (d[i] == d[best] && pb.lex_rank(i) < pb.lex_rank(best))) best = i;
    return best;
}

// Smallest d among the current support; exact ties go to the
// lexicographically largest sequence.
inline std::optional<std::size_t> away_index(const BayesProblem& pb, const std::vector<double>& d,
                                             const std::vector<double>& w, std::size_t exclude) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (w[i] <= 0.0 || i == exclude) continue;
        if (!best || d[i] < d[*best] || (d[i] == d[*best] && pb.lex_rank(i) > pb.lex_rank(*best))) best = i;
    }
    return best;
}

inline std::vector<double> shifted(const std::vector<double>& w, std::size_t to, std::size_t from, double g) {
    std::vector<double> out = w;
    out[to] += g;
    out[from] -= g;
    if (out[from] < 0.0) out[from] = 0.0;
    return out;
}

/// Minimizes the convex 1-D restriction on [0, gmax] by a safeguarded
/// Illinois search for a root of its derivative.
inline double pair_line_search(const BayesProblem& pb, const std::vector<double>& w, std::size_t to,
                               std::size_t from, double gmax, double slope0) {
    double lo = 0.0, s_lo = slope0;
    double hi = gmax;
    double s_hi = pb.pair_slope(shifted(w, to, from, gmax), to, from, nullptr);
    if (s_hi <= 0.0) return gmax;  // the whole mass of `from` moves
    int side = 0;
    for (int it = 0; it < 60 && hi - lo > 1e-15 * std::max(1.0, gmax); ++it) {
        double g;
        if (std::isfinite(s_hi)) {
            g = lo - s_lo * (hi - lo) / (s_hi - s_lo);
            if (!(g > lo && g < hi)) g = 0.5 * (lo + hi);
        } else {
            g = 0.5 * (lo + hi);
        }
        const double s = pb.pair_slope(shifted(w, to, from, g), to, from, nullptr);
        if (std::abs(s) <= 1e-14 * (1.0 + std::abs(slope0))) return g;
        if (s < 0.0) {
            lo = g;
            s_lo = s;
            if (side == -1 && std::isfinite(s_hi)) s_hi *= 0.5;
            side = -1;
        } else {
            hi = g;
            s_hi = s;
            if (side == +1) s_lo *= 0.5;
            side = +1;
        }
    }
    return lo;
}

/// Newton step for Psi restricted to the weights in `support`, keeping the
/// total mass fixed. Directions along which the criterion is flat get no
/// movement (minimum-norm solution). Returns the proposed weights after a
/// backtracking search, or nothing when no descent was found.
inline std::optional<std::vector<double>> support_newton(const BayesProblem& pb, const std::vector<double>& w,
                                                         const std::vector<double>& d, double f,
                                                         const std::vector<std::size_t>& support) {
    const auto s = static_cast<Eigen::Index>(support.size());
    if (s < 2) return std::nullopt;
    Matrix h;
    try {
        h = pb.support_hessian(w, support);
    } catch (const NonEstimableError&) {
        return std::nullopt;
    }
    Vector g(s);
    for (Eigen::Index i = 0; i < s; ++i) g(i) = -d[support[static_cast<std::size_t>(i)]];

    // Orthonormal basis of {x : sum x = 0}.
    Eigen::HouseholderQR<Matrix> qr(Matrix::Ones(s, 1));
    const Matrix q = qr.householderQ();
    const Matrix z = q.rightCols(s - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(z.transpose() * h * z));
    const Vector ev = es.eigenvalues();
    const double top = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
    const Vector gr = es.eigenvectors().transpose() * (z.transpose() * g);
    Vector step_r = Vector::Zero(s - 1);
    for (Eigen::Index i = 0; i < s - 1; ++i)
        if (ev(i) > 1e-10 * top) step_r(i) = -gr(i) / ev(i);
    const Vector delta = z * (es.eigenvectors() * step_r);
    const double slope = g.dot(delta);
    if (!(slope < 0.0)) return std::nullopt;

    double t_max = 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i = 0; i < s; ++i) {
        const double wi = w[support[static_cast<std::size_t>(i)]];
        if (delta(i) < 0.0 && wi + t_max * delta(i) < 0.0) {
            t_max = -wi / delta(i);
            blocking = i;
        }
    }
    for (double t = t_max, shrink = 0; shrink < 40; ++shrink, t *= 0.5) {
        std::vector<double> out = w;
        for (Eigen::Index i = 0; i < s; ++i) {
            auto& wi = out[support[static_cast<std::size_t>(i)]];
            wi = std::max(0.0, wi + t * delta(i));
        }
        if (t == t_max && blocking >= 0) out[support[static_cast<std::size_t>(blocking)]] = 0.0;
        double total = 0.0;
        for (double v : out) total += v;
        for (double& v : out) v /= total;
        const double fn = pb.objective(out);
        if (fn < f + 1e-4 * t * slope) return out;
        if (fn < f && t < 1e-6) return out;
    }
    return std::nullopt;
}

struct RunOutcome {
    std::vector<double> weights;
    double objective = 0.0;
    double gap = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

inline RunOutcome run_from(const BayesProblem& pb, std::vector<double> w, const OptimizerConfig& cfg) {
    const std::size_t q = pb.contrast_count();
    std::vector<double> d;
    RunOutcome out;
    double f = pb.evaluate(w, d);
    std::size_t stall = 0;

    for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
        const double gap = simplex_gap(d, q);
        if (gap <= cfg.gap_tolerance) {
            out.converged = true;
            break;
        }
        double f_new = f;
        std::vector<double> w_new;
        if (it < cfg.multiplicative_steps) {
            w_new.resize(w.size());
            double s = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) s += (w_new[i] = w[i] * std::max(d[i], 0.0) / static_cast<double>(q));
            for (double& v : w_new) v /= s;
            f_new = pb.objective(w_new);
        }
        if (!(f_new < f)) {
            // Second-order step on the support plus the best outside candidate.
            const std::size_t best = toward_index(pb, d);
            std::vector<std::size_t> support;
            for (std::size_t i = 0; i < w.size(); ++i)
                if (w[i] > 0.0 || i == best) support.push_back(i);
            if (auto wn = support_newton(pb, w, d, f, support)) {
                w_new = std::move(*wn);
                f_new = pb.objective(w_new);
            }
        }
        if (!(f_new < f)) {
            const std::size_t to = toward_index(pb, d);
            const auto from = away_index(pb, d, w, to);
            if (!from || !(d[to] > d[*from])) {
                out.converged = gap <= cfg.gap_tolerance;
                break;
            }
            const double g = pair_line_search(pb, w, to, *from, w[*from], -(d[to] - d[*from]));
            w_new = shifted(w, to, *from, g);
            if (g == w[*from]) w_new[*from] = 0.0;
            f_new = pb.objective(w_new);
        }
        out.iterations = it + 1;
        if (!(f_new < f)) break;  // no descent possible at working precision
        const double change = (f - f_new) / std::max(1.0, std::abs(f));
        w = std::move(w_new);
        f = pb.evaluate(w, d);
        stall = change < cfg.objective_tolerance ? stall + 1 : 0;
        if (stall >= 200) break;
    }
    out.gap = simplex_gap(d, q);
    out.converged = out.converged || out.gap <= cfg.gap_tolerance;
    out.weights = std::move(w);
    out.objective = f;
    return out;
}

}  // namespace detail

/// Equivalence-theorem statistic: max over candidates of the prior-averaged
/// tr[M^{-1}E'(E M^{-1}E')^{-1} E M^{-1} M_w] minus (t - 1). Zero at an
/// optimum, positive otherwise.
inline double optimality_gap(const ApproxDesign& design, const std::vector<TreatmentSequence>& candidates,
                             const PriorSample& sample, const ModelSpec& spec, const CorrelationKind& kind,
                             const CrossoverLayout& layout) {
    design.validate(layout);
    std::vector<TreatmentSequence> all = candidates;
    for (const auto& s : design.sequences)
        if (std::find(all.begin(), all.end(), s) == all.end()) all.push_back(s);
    const BayesProblem pb(all, sample, spec, kind, layout);
    std::vector<double> w(all.size(), 0.0);
    for (std::size_t i = 0; i < design.size(); ++i)
        w[static_cast<std::size_t>(std::find(all.begin(), all.end(), design.sequences[i]) - all.begin())] =
            design.weights[i];
    std::vector<double> d;
    pb.evaluate(w, d);
    return detail::simplex_gap(d, pb.contrast_count());
}

namespace detail {

inline ApproxDesign to_design(const BayesProblem& pb, const std::vector<double>& w) {
    ApproxDesign out;
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i] > 0.0) {
            out.sequences.push_back(pb.candidates()[i]);
            out.weights.push_back(w[i]);
        }
    return out;
}

inline std::vector<double> prune(std::vector<double> w, double threshold) {
    double s = 0.0;
    for (double& v : w) {
        if (v < threshold) v = 0.0;
        s += v;
    }
    for (double& v : w) v /= s;
    return w;
}

}  // namespace detail

/// Best of `config.restarts` runs: the first from uniform weights, the rest
/// from seeded random points of the simplex. A later run replaces an
/// earlier one only when it is strictly better beyond rounding.
inline OptimizationResult optimize_weights(const BayesProblem& pb, const OptimizerConfig& config) {
    config.validate();
    const std::size_t k = pb.candidate_count();
    if (k > 1 && !(config.weight_prune_threshold < 1.0 / static_cast<double>(k)))
        throw ValidationError("optimizer: prune threshold must be below 1/|candidates|");

    if (k == 1) {
        OptimizationResult r;
        r.design = detail::to_design(pb, {1.0});
        std::vector<double> d;
        r.objective = pb.evaluate({1.0}, d);
        r.optimality_gap = detail::simplex_gap(d, pb.contrast_count());
        r.converged = true;
        return r;
    }

    std::mt19937_64 rng(config.seed);
    const std::vector<double> uniform(k, 1.0 / static_cast<double>(k));

    // Starting design: uniform weights, else uniform over random subsets.
    std::vector<double> start = uniform;
    if (!std::isfinite(pb.objective(start))) {
        bool found = false;
        std::bernoulli_distribution coin(0.5);
        for (int attempt = 0; attempt < 50 && !found; ++attempt) {
            std::vector<double> w(k, 0.0);
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i)
                if (coin(rng)) s += (w[i] = 1.0);
            if (s == 0.0) continue;
            for (double& v : w) v /= s;
            if (std::isfinite(pb.objective(w))) {
                start = w;
                found = true;
            }
        }
        if (!found) {
            std::vector<double> d;
            pb.evaluate(uniform, d);  // throws with the rank diagnostic
            throw NonEstimableError("no estimable starting design found", 0, parameter_count(pb.layout(), pb.spec()));
        }
    }

    std::optional<detail::RunOutcome> best;
    std::size_t total_iterations = 0;
    std::exponential_distribution<double> expo(1.0);
    for (std::size_t r = 0; r < config.restarts; ++r) {
        std::vector<double> w0 = start;
        if (r > 0) {
            double s = 0.0;
            std::vector<double> x(k);
            for (std::size_t i = 0; i < k; ++i) s += (x[i] = expo(rng));
            for (std::size_t i = 0; i < k; ++i) w0[i] = 0.5 * start[i] + 0.5 * x[i] / s;
            if (!std::isfinite(pb.objective(w0))) w0 = start;
        }
        auto run = detail::run_from(pb, std::move(w0), config);
        total_iterations += run.iterations;
        if (!best || run.objective < best->objective - 1e-12 * std::max(1.0, std::abs(best->objective)))
            best = std::move(run);
    }

    std::vector<double> w = detail::prune(best->weights, config.weight_prune_threshold);
    std::vector<double> d;
    OptimizationResult out;
    out.objective = pb.evaluate(w, d);
    out.optimality_gap = detail::simplex_gap(d, pb.contrast_count());
    out.design = detail::to_design(pb, w);
    out.iterations = total_iterations;
    out.converged = best->converged;
    return out;
}

inline OptimizationResult optimize_weights(const std::vector<TreatmentSequence>& candidates, const PriorSample& sample,
                                           const ModelSpec& spec, const CorrelationKind& kind,
                                           const CrossoverLayout& layout, const OptimizerConfig& config = {}) {
    return optimize_weights(BayesProblem(candidates, sample, spec, kind, layout), config);
}

struct SweepRow {
    CorrelationStructure structure = CorrelationStructure::independent;
    double alpha = 0.0;
    std::optional<OptimizationResult> result;
    std::string error;  // set when the cell failed
};

/// One optimization per (structure, alpha) cell. Cells run on up to
/// `workers` threads; rows come back in structure-major order regardless.
inline std::vector<SweepRow> weight_sweep(const std::vector<TreatmentSequence>& candidates, const PriorSample& sample,
                                          const ModelSpec& spec, const std::vector<CorrelationStructure>& structures,
                                          const std::vector<double>& alphas, const CrossoverLayout& layout,
                                          const OptimizerConfig& config = {}, std::size_t workers = 1) {
    std::vector<SweepRow> rows;
    for (auto s : structures)
        for (double a : alphas) rows.push_back({s, a, std::nullopt, {}});

    auto solve = [&](SweepRow& row) {
        try {
            row.result = optimize_weights(candidates, sample, spec, CorrelationKind{row.structure, row.alpha}, layout,
                                          config);
        } catch (const Error& e) {
            row.error = e.what();
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, rows.size()));
    if (workers == 1) {
        for (auto& r : rows) solve(r);
        return rows;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < rows.size(); i += workers) solve(rows[i]);
        });
    for (auto& th : pool) th.join();
    return rows;
}

}  // namespace xover
