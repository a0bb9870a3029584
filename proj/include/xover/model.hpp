#pragma once

// Response families, link functions and crossover design matrices.
//
// Parameters use reference-cell coding with the last level of every factor
// as reference:
//
//   theta = (mu | period_1..period_{p-1} | direct_1..direct_{t-1}
//               | carryover_1..carryover_{t-1})
//
// so m = 1 + (p-1) + (t-1) [+ (t-1) with carryover]. Carryover is absent in
// the first period.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "xover/errors.hpp"

namespace xover {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Coefficient vector laid out as described at the top of this header.
using ParamVector = Eigen::VectorXd;

inline constexpr std::size_t kMaxTreatments = 26;
inline constexpr double kEtaClamp = 40.0;

/// Trial geometry. Designs with t > p are allowed even though the usual
/// setting is t <= p.
struct CrossoverLayout {
    std::size_t treatments = 2;
    std::size_t periods = 2;
    std::size_t subjects = 1;

    void validate() const {
        if (treatments < 2 || treatments > kMaxTreatments)
            throw ValidationError("layout: treatments must be in [2, 26], got " +
                                  std::to_string(treatments));
        if (periods < 2)
            throw ValidationError("layout: periods must be >= 2, got " + std::to_string(periods));
        if (subjects < 1) throw ValidationError("layout: subjects must be >= 1");
    }
};

/// One treatment per period, stored as 0-based treatment indices
/// (A = 0, B = 1, ...).
class TreatmentSequence {
   public:
    TreatmentSequence() = default;
    explicit TreatmentSequence(std::vector<int> treatments) : treatments_(std::move(treatments)) {}

    /// Parses an uppercase letter string such as "ABCD".
    static TreatmentSequence parse(std::string_view text) {
        if (text.empty()) throw ValidationError("empty treatment sequence");
        std::vector<int> out;
        out.reserve(text.size());
        for (char c : text) {
            if (c < 'A' || c > 'Z')
                throw ValidationError("invalid treatment letter '" + std::string(1, c) +
                                      "' in sequence \"" + std::string(text) + "\"");
            out.push_back(c - 'A');
        }
        return TreatmentSequence(std::move(out));
    }

    std::string str() const {
        std::string s;
        s.reserve(treatments_.size());
        for (int k : treatments_) s.push_back(static_cast<char>('A' + k));
        return s;
    }

    std::size_t size() const noexcept { return treatments_.size(); }
    int operator[](std::size_t period) const { return treatments_[period]; }
    const std::vector<int>& treatments() const noexcept { return treatments_; }

    void validate(const CrossoverLayout& layout) const {
        if (treatments_.size() != layout.periods)
            throw ValidationError("sequence " + str() + " has " +
                                  std::to_string(treatments_.size()) + " periods, layout has " +
                                  std::to_string(layout.periods));
        for (int k : treatments_)
            if (k < 0 || static_cast<std::size_t>(k) >= layout.treatments)
                throw ValidationError("sequence " + str() + " uses a treatment outside A.." +
                                      std::string(1, static_cast<char>('A' + layout.treatments - 1)));
    }

    friend bool operator==(const TreatmentSequence&, const TreatmentSequence&) = default;
    friend auto operator<=>(const TreatmentSequence& a, const TreatmentSequence& b) {
        return a.treatments_ <=> b.treatments_;
    }

   private:
    std::vector<int> treatments_;
};

enum class FamilyKind { bernoulli, poisson, gamma };

/// Response distribution. Gamma carries its (known) shape kappa.
struct Family {
    FamilyKind kind = FamilyKind::poisson;
    double shape = 1.0;

    static Family bernoulli() { return {FamilyKind::bernoulli, 1.0}; }
    static Family poisson() { return {FamilyKind::poisson, 1.0}; }
    static Family gamma(double shape) {
        if (!(shape > 0.0) || !std::isfinite(shape))
            throw ValidationError("gamma shape must be positive, got " + std::to_string(shape));
        return {FamilyKind::gamma, shape};
    }

    /// psi: 1 for Bernoulli and Poisson, 1/kappa for Gamma.
    double dispersion() const { return kind == FamilyKind::gamma ? 1.0 / shape : 1.0; }

    std::string name() const {
        switch (kind) {
            case FamilyKind::bernoulli: return "bernoulli";
            case FamilyKind::poisson: return "poisson";
            case FamilyKind::gamma: return "gamma";
        }
        return "?";
    }
};

inline Family parse_family(std::string_view name, double shape = 1.0) {
    if (name == "bernoulli" || name == "binary") return Family::bernoulli();
    if (name == "poisson") return Family::poisson();
    if (name == "gamma") return Family::gamma(shape);
    throw ValidationError("unknown family \"" + std::string(name) +
                          "\" (expected bernoulli, poisson or gamma)");
}

enum class Link { logit, log };

/// Family plus the reduced/full distinction. The link is always the
/// family's canonical pairing: logit for Bernoulli, log otherwise.
struct ModelSpec {
    Family family = Family::poisson();
    bool carryover = false;

    Link link() const { return family.kind == FamilyKind::bernoulli ? Link::logit : Link::log; }
};

inline std::size_t parameter_count(const CrossoverLayout& layout, const ModelSpec& spec) {
    const std::size_t t1 = layout.treatments - 1;
    return 1 + (layout.periods - 1) + t1 + (spec.carryover ? t1 : 0);
}

/// Offsets of the coefficient blocks inside a ParamVector.
struct ParamBlocks {
    std::size_t period_begin = 1;
    std::size_t direct_begin = 0;
    std::size_t direct_count = 0;
    std::size_t carryover_begin = 0;
    std::size_t carryover_count = 0;  // 0 in the reduced model
    std::size_t size = 0;
};

inline ParamBlocks param_blocks(const CrossoverLayout& layout, const ModelSpec& spec) {
    ParamBlocks b;
    b.period_begin = 1;
    b.direct_begin = layout.periods;
    b.direct_count = layout.treatments - 1;
    b.carryover_begin = b.direct_begin + b.direct_count;
    b.carryover_count = spec.carryover ? b.direct_count : 0;
    b.size = parameter_count(layout, spec);
    return b;
}

/// Human-readable coefficient names, e.g. mu, period_1, direct_A, carryover_A.
inline std::vector<std::string> parameter_names(const CrossoverLayout& layout, const ModelSpec& spec) {
    std::vector<std::string> names{"mu"};
    for (std::size_t i = 1; i < layout.periods; ++i) names.push_back("period_" + std::to_string(i));
    for (std::size_t k = 0; k + 1 < layout.treatments; ++k)
        names.push_back(std::string("direct_") + static_cast<char>('A' + k));
    if (spec.carryover)
        for (std::size_t k = 0; k + 1 < layout.treatments; ++k)
            names.push_back(std::string("carryover_") + static_cast<char>('A' + k));
    return names;
}

/// p x m indicator matrix for one sequence.
inline Matrix build_design_matrix(const TreatmentSequence& seq, const CrossoverLayout& layout,
                                  const ModelSpec& spec) {
    seq.validate(layout);
    const ParamBlocks b = param_blocks(layout, spec);
    const auto ref = static_cast<int>(layout.treatments) - 1;
    Matrix x = Matrix::Zero(static_cast<Eigen::Index>(layout.periods), static_cast<Eigen::Index>(b.size));
    for (std::size_t i = 0; i < layout.periods; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        x(row, 0) = 1.0;
        if (i + 1 < layout.periods) x(row, static_cast<Eigen::Index>(b.period_begin + i)) = 1.0;
        if (seq[i] != ref) x(row, static_cast<Eigen::Index>(b.direct_begin + seq[i])) = 1.0;
        if (spec.carryover && i > 0 && seq[i - 1] != ref)
            x(row, static_cast<Eigen::Index>(b.carryover_begin + seq[i - 1])) = 1.0;
    }
    return x;
}

inline double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }

/// Inverse link: logistic for Bernoulli, exp otherwise. eta is clamped to
/// [-40, 40] first.
inline double mean_response(const ModelSpec& spec, double eta) {
    const double e = clamp_eta(eta);
    if (spec.link() == Link::logit) {
        // Evaluated on the side that cannot overflow, and kept below 1 so
        // that mu(1 - mu) stays positive at the clamp.
        if (e >= 0) return std::min(1.0 / (1.0 + std::exp(-e)), std::nextafter(1.0, 0.0));
        const double z = std::exp(e);
        return z / (1.0 + z);
    }
    return std::exp(e);
}

/// Var(Y) as a function of the mean: mu(1-mu), mu, or mu^2/kappa.
inline double variance_function(const ModelSpec& spec, double mu) {
    switch (spec.family.kind) {
        case FamilyKind::bernoulli:
            if (!(mu > 0.0 && mu < 1.0))
                throw ValidationError("bernoulli mean must lie in (0, 1), got " + std::to_string(mu));
            return mu * (1.0 - mu);
        case FamilyKind::poisson:
            if (!(mu > 0.0) || !std::isfinite(mu))
                throw ValidationError("poisson mean must be positive, got " + std::to_string(mu));
            return mu;
        case FamilyKind::gamma:
            if (!(mu > 0.0) || !std::isfinite(mu))
                throw ValidationError("gamma mean must be positive, got " + std::to_string(mu));
            return mu * mu / spec.family.shape;
    }
    return 0.0;
}

/// d mu / d eta at eta.
inline double mu_eta_derivative(const ModelSpec& spec, double eta) {
    const double mu = mean_response(spec, eta);
    return spec.link() == Link::logit ? mu * (1.0 - mu) : mu;
}

inline constexpr std::size_t kDefaultSequenceCap = 10000;

/// All t^p sequences in lexicographic order, or the validated explicit list
/// in its given order.
inline std::vector<TreatmentSequence> enumerate_sequences(
    const CrossoverLayout& layout, const std::optional<std::vector<TreatmentSequence>>& restriction = {},
    std::size_t cap = kDefaultSequenceCap) {
    layout.validate();
    if (restriction) {
        if (restriction->empty()) throw ValidationError("candidate sequence list is empty");
        for (std::size_t i = 0; i < restriction->size(); ++i) {
            (*restriction)[i].validate(layout);
            for (std::size_t j = 0; j < i; ++j)
                if ((*restriction)[i] == (*restriction)[j])
                    throw ValidationError("duplicate candidate sequence " + (*restriction)[i].str());
        }
        return *restriction;
    }
    double total = std::pow(static_cast<double>(layout.treatments), static_cast<double>(layout.periods));
    if (total > static_cast<double>(cap))
        throw ValidationError("t^p = " + std::to_string(static_cast<long long>(total)) +
                              " sequences exceeds the enumeration cap " + std::to_string(cap) +
                              "; supply an explicit candidate list");
    const auto count = static_cast<std::size_t>(total);
    std::vector<TreatmentSequence> out;
    out.reserve(count);
    std::vector<int> digits(layout.periods, 0);
    for (std::size_t n = 0; n < count; ++n) {
        out.emplace_back(digits);
        for (std::size_t pos = layout.periods; pos-- > 0;) {
            if (++digits[pos] < static_cast<int>(layout.treatments)) break;
            digits[pos] = 0;
        }
    }
    return out;
}

inline std::vector<TreatmentSequence> parse_sequences(const std::vector<std::string>& texts) {
    std::vector<TreatmentSequence> out;
    out.reserve(texts.size());
    for (const auto& s : texts) out.push_back(TreatmentSequence::parse(s));
    return out;
}

}  // namespace xover
