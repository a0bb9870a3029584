#pragma once

// GEE information and variance of approximate crossover designs, and the
// log-determinant criterion on the direct-treatment block.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xover/correlation.hpp"
#include "xover/errors.hpp"
#include "xover/model.hpp"

namespace xover {

inline constexpr double kMinRcond = 1e-12;
inline constexpr double kWeightSumTolerance = 1e-12;

/// Allocation weights over distinct treatment sequences.
struct ApproxDesign {
    std::vector<TreatmentSequence> sequences;
    std::vector<double> weights;

    static ApproxDesign uniform(std::vector<TreatmentSequence> seqs) {
        const double w = seqs.empty() ? 0.0 : 1.0 / static_cast<double>(seqs.size());
        std::vector<double> weights(seqs.size(), w);
        return {std::move(seqs), std::move(weights)};
    }

    std::size_t size() const noexcept { return sequences.size(); }

    void validate(const CrossoverLayout& layout) const {
        if (sequences.empty()) throw ValidationError("design has no sequences");
        if (sequences.size() != weights.size())
            throw ValidationError("design has " + std::to_string(sequences.size()) + " sequences but " +
                                  std::to_string(weights.size()) + " weights");
        double total = 0.0;
        for (std::size_t i = 0; i < sequences.size(); ++i) {
            sequences[i].validate(layout);
            if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
                throw ValidationError("negative or non-finite weight for " + sequences[i].str());
            for (std::size_t j = 0; j < i; ++j)
                if (sequences[i] == sequences[j])
                    throw ValidationError("design lists " + sequences[i].str() + " twice");
            total += weights[i];
        }
        if (std::abs(total - 1.0) > kWeightSumTolerance)
            throw ValidationError("design weights sum to " + std::to_string(total) + ", not 1");
    }
};

/// Selects the direct-effect block (t-1 rows) out of an m-vector.
inline Matrix contrast_extractor(const CrossoverLayout& layout, const ModelSpec& spec) {
    const ParamBlocks b = param_blocks(layout, spec);
    Matrix e = Matrix::Zero(static_cast<Eigen::Index>(b.direct_count), static_cast<Eigen::Index>(b.size));
    for (std::size_t k = 0; k < b.direct_count; ++k)
        e(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(b.direct_begin + k)) = 1.0;
    return e;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

namespace detail {

/// Factorized correlation matrix with the conditioning guard applied.
inline Eigen::LLT<Matrix> factor_correlation(const CorrelationKind& kind, std::size_t periods) {
    Eigen::LLT<Matrix> llt(working_correlation(kind, periods));
    if (llt.info() != Eigen::Success || llt.rcond() < kMinRcond)
        throw NumericalError("working correlation " + to_string(kind.structure) + "(" +
                             std::to_string(kind.alpha) + ") is numerically singular");
    return llt;
}

/// S X with S = diag(dmu/deta / sqrt(Var Y)). Then D'V^{-1}D = (SX)' R^{-1} (SX),
/// and V itself never has to be formed.
inline Matrix scaled_design(const Matrix& x, const ParamVector& theta, const ModelSpec& spec) {
    if (theta.size() != x.cols())
        throw ValidationError("parameter vector has length " + std::to_string(theta.size()) +
                              ", model needs " + std::to_string(x.cols()));
    const Vector eta = x * theta;
    Matrix sx = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = mean_response(spec, eta(i));
        const double d = mu_eta_derivative(spec, eta(i));
        const double v = variance_function(spec, mu);
        const double s = d / std::sqrt(v);
        if (!(s > 0.0) || !std::isfinite(s))
            throw NumericalError("degenerate mean at linear predictor " + std::to_string(eta(i)));
        sx.row(i) *= s;
    }
    return sx;
}

inline std::size_t numerical_rank(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
    const Vector ev = es.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    if (top == 0.0) return 0;
    return static_cast<std::size_t>((ev.array() > top * 1e-10).count());
}

}  // namespace detail

/// (dmu/dtheta)' V^{-1} (dmu/dtheta) for a single subject on `seq`.
inline Matrix sequence_information(const TreatmentSequence& seq, const ParamVector& theta, const ModelSpec& spec,
                                   const CorrelationKind& kind, const CrossoverLayout& layout) {
    const Matrix sx = detail::scaled_design(build_design_matrix(seq, layout, spec), theta, spec);
    const auto llt = detail::factor_correlation(kind, layout.periods);
    return symmetrized(sx.transpose() * llt.solve(sx));
}

/// n * sum_w p_w * sequence_information(w).
inline Matrix design_information(const ApproxDesign& design, const ParamVector& theta, const ModelSpec& spec,
                                 const CorrelationKind& kind, const CrossoverLayout& layout, double n = 1.0) {
    design.validate(layout);
    const auto llt = detail::factor_correlation(kind, layout.periods);
    const auto m = static_cast<Eigen::Index>(parameter_count(layout, spec));
    Matrix info = Matrix::Zero(m, m);
    for (std::size_t i = 0; i < design.size(); ++i) {
        if (design.weights[i] == 0.0) continue;
        const Matrix sx = detail::scaled_design(build_design_matrix(design.sequences[i], layout, spec), theta, spec);
        info.noalias() += design.weights[i] * (sx.transpose() * llt.solve(sx));
    }
    return symmetrized(n * info);
}

/// Inverse of a symmetric information matrix; NonEstimableError when it is
/// singular or ill-conditioned.
inline Matrix invert_information(const Matrix& info) {
    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success || !(llt.rcond() >= kMinRcond))
        throw NonEstimableError("non-estimable under this design", detail::numerical_rank(info),
                                static_cast<std::size_t>(info.rows()));
    return symmetrized(llt.solve(Matrix::Identity(info.rows(), info.cols())));
}

inline Matrix model_based_variance(const ApproxDesign& design, const ParamVector& theta, const ModelSpec& spec,
                                   const CorrelationKind& kind, const CrossoverLayout& layout, double n = 1.0) {
    return invert_information(design_information(design, theta, spec, kind, layout, n));
}

/// B^{-1} M B^{-1}: GEE fitted with `working` while the data follow `truth`.
inline Matrix sandwich_variance(const ApproxDesign& design, const ParamVector& theta, const ModelSpec& spec,
                                const CorrelationKind& working, const CorrelationKind& truth,
                                const CrossoverLayout& layout, double n = 1.0) {
    design.validate(layout);
    const auto wl = detail::factor_correlation(working, layout.periods);
    truth.validate(layout.periods);
    const Matrix r_truth = working_correlation(truth, layout.periods);
    const auto m = static_cast<Eigen::Index>(parameter_count(layout, spec));
    Matrix bread = Matrix::Zero(m, m);
    Matrix meat = Matrix::Zero(m, m);
    for (std::size_t i = 0; i < design.size(); ++i) {
        if (design.weights[i] == 0.0) continue;
        const Matrix sx = detail::scaled_design(build_design_matrix(design.sequences[i], layout, spec), theta, spec);
        const Matrix g = wl.solve(sx);  // R_w^{-1} S X
        bread.noalias() += design.weights[i] * (sx.transpose() * g);
        meat.noalias() += design.weights[i] * (g.transpose() * r_truth * g);
    }
    const Matrix bread_inv = invert_information(symmetrized(n * bread));
    return symmetrized(bread_inv * (n * meat) * bread_inv);
}

/// Direct-effect block E Var E' of a full variance matrix.
inline Matrix contrast_block(const Matrix& variance, const CrossoverLayout& layout, const ModelSpec& spec) {
    const ParamBlocks b = param_blocks(layout, spec);
    const auto k = static_cast<Eigen::Index>(b.direct_count);
    const auto s = static_cast<Eigen::Index>(b.direct_begin);
    return symmetrized(variance.block(s, s, k, k));
}

inline Matrix contrast_variance(const ApproxDesign& design, const ParamVector& theta, const ModelSpec& spec,
                                const CorrelationKind& kind, const CrossoverLayout& layout, double n = 1.0) {
    return contrast_block(model_based_variance(design, theta, spec, kind, layout, n), layout, spec);
}

/// log det of a symmetric positive definite matrix.
inline double log_det_spd(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success)
        throw NonEstimableError("contrast variance is not positive definite", detail::numerical_rank(a),
                                static_cast<std::size_t>(a.rows()));
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Lambda = log det Var(direct effects), computed from the information matrix.
inline double d_criterion_from_information(const Matrix& info, const CrossoverLayout& layout,
                                           const ModelSpec& spec) {
    return log_det_spd(contrast_block(invert_information(info), layout, spec));
}

inline double d_criterion(const ApproxDesign& design, const ParamVector& theta, const ModelSpec& spec,
                          const CorrelationKind& kind, const CrossoverLayout& layout, double n = 1.0) {
    return log_det_spd(contrast_variance(design, theta, spec, kind, layout, n));
}

/// Lambda together with the matrix G = M^{-1}E'(E M^{-1} E')^{-1} E M^{-1}.
/// For a sequence information M_w, tr(G M_w) is the directional derivative
/// of -Lambda towards w, and sum_w p_w tr(G M_w) = t - 1.
struct CriterionState {
    double value = 0.0;
    Matrix sensitivity;
};

inline CriterionState criterion_state(const Matrix& info, const CrossoverLayout& layout, const ModelSpec& spec) {
    const Matrix inv = invert_information(info);
    const ParamBlocks b = param_blocks(layout, spec);
    const auto k = static_cast<Eigen::Index>(b.direct_count);
    const auto s = static_cast<Eigen::Index>(b.direct_begin);
    const Matrix c = symmetrized(inv.block(s, s, k, k));
    Eigen::LLT<Matrix> cl(c);
    if (cl.info() != Eigen::Success)
        throw NonEstimableError("contrast variance is not positive definite", detail::numerical_rank(info),
                                static_cast<std::size_t>(info.rows()));
    const Matrix g = inv.middleCols(s, k);  // M^{-1} E'
    CriterionState out;
    out.value = 2.0 * cl.matrixL().toDenseMatrix().diagonal().array().log().sum();
    out.sensitivity = symmetrized(g * cl.solve(g.transpose()));
    return out;
}

}  // namespace xover
