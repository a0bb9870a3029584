#pragma once

// Working correlation structures for the p repeated measures of a subject.

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>

#include <Eigen/Dense>

#include "xover/errors.hpp"

namespace xover {

enum class CorrelationStructure { independent, compound_symmetric, ar1 };

inline std::string to_string(CorrelationStructure s) {
    switch (s) {
        case CorrelationStructure::independent: return "independent";
        case CorrelationStructure::compound_symmetric: return "cs";
        case CorrelationStructure::ar1: return "ar1";
    }
    return "?";
}

inline CorrelationStructure parse_structure(std::string_view name) {
    if (name == "independent" || name == "ind") return CorrelationStructure::independent;
    if (name == "cs" || name == "exchangeable") return CorrelationStructure::compound_symmetric;
    if (name == "ar1") return CorrelationStructure::ar1;
    throw ValidationError("unknown correlation kind \"" + std::string(name) +
                          "\" (expected independent, cs or ar1)");
}

/// Open interval of admissible alpha for a structure at p periods.
inline std::pair<double, double> admissible_alpha(CorrelationStructure s, std::size_t periods) {
    switch (s) {
        case CorrelationStructure::independent: return {0.0, 0.0};
        case CorrelationStructure::compound_symmetric:
            return {-1.0 / (static_cast<double>(periods) - 1.0), 1.0};
        case CorrelationStructure::ar1: return {-1.0, 1.0};
    }
    return {0.0, 0.0};
}

/// A structure with its (fixed) scalar parameter. Independent ignores alpha.
struct CorrelationKind {
    CorrelationStructure structure = CorrelationStructure::independent;
    double alpha = 0.0;

    static CorrelationKind independent() { return {CorrelationStructure::independent, 0.0}; }
    static CorrelationKind cs(double a) { return {CorrelationStructure::compound_symmetric, a}; }
    static CorrelationKind ar1(double a) { return {CorrelationStructure::ar1, a}; }

    double effective_alpha() const {
        return structure == CorrelationStructure::independent ? 0.0 : alpha;
    }

    void validate(std::size_t periods) const {
        if (structure == CorrelationStructure::independent) return;
        const auto [lo, hi] = admissible_alpha(structure, periods);
        if (!(alpha > lo && alpha < hi))
            throw ValidationError(to_string(structure) + " correlation requires alpha in (" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + ") for p = " +
                                  std::to_string(periods) + ", got " + std::to_string(alpha));
    }
};

/// R(alpha): CS (1-a)I + aJ, AR(1) a^{|i-i'|}, or the identity.
inline Eigen::MatrixXd working_correlation(const CorrelationKind& kind, std::size_t periods) {
    kind.validate(periods);
    const auto p = static_cast<Eigen::Index>(periods);
    Eigen::MatrixXd r = Eigen::MatrixXd::Identity(p, p);
    const double a = kind.effective_alpha();
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) {
            if (i == j) continue;
            switch (kind.structure) {
                case CorrelationStructure::independent: break;
                case CorrelationStructure::compound_symmetric: r(i, j) = a; break;
                case CorrelationStructure::ar1:
                    r(i, j) = std::pow(a, static_cast<double>(std::abs(i - j)));
                    break;
            }
        }
    return r;
}

}  // namespace xover
