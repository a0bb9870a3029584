#pragma once

// Case-study inputs shared by the unit and acceptance tests: the published
// estimate tables of the three examples and their candidate sets.

#include <string>
#include <vector>

#include "xover/catalog.hpp"
#include "xover/optimizer.hpp"
#include "xover/priors.hpp"

namespace fixtures {

using namespace xover;

inline Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

inline ApproxDesign uniform(std::initializer_list<const char*> seqs) {
    std::vector<std::string> s(seqs.begin(), seqs.end());
    return ApproxDesign::uniform(parse_sequences(s));
}

inline constexpr std::uint64_t kSeed = 20240601;
inline constexpr std::size_t kPoints = 100;

struct CaseStudy {
    CrossoverLayout layout;
    ModelSpec spec;
    std::vector<TreatmentSequence> candidates;
    Vector estimate, lower, upper;

    PriorSample sample(std::size_t n = kPoints, std::uint64_t seed = kSeed) const {
        return lhs_sample(UniformBox{lower, upper}, n, seed);
    }
};

inline std::vector<TreatmentSequence> binary_candidates() {
    return parse_sequences({"ACDB", "BDCA", "CBAD", "DABC", "ADCB", "BCDA", "CABD", "DBAC", "AABB", "BBAA", "CCDD",
                            "DDCC", "AAAB", "BBBA", "CCCD", "DDDC"});
}

inline CaseStudy binary_reduced() {
    return {{4, 4, 80}, {Family::bernoulli(), false}, binary_candidates(),
            vec({1.0980, -0.3056, -0.2414, 0.3817, -0.3270, -0.0681, -0.5322}),
            vec({0.4232, -0.8643, -0.8228, -0.2391, -0.8660, -0.6996, -1.1684}),
            vec({1.7728, 0.2532, 0.3399, 1.0026, 0.2119, 0.5635, 0.1041})};
}

inline CaseStudy binary_full() {
    return {{4, 4, 80}, {Family::bernoulli(), true}, binary_candidates(),
            vec({1.0158, -0.5525, -0.4842, 0.1234, -0.2564, 0.0069, -0.3736, 0.1786, 0.2242, 0.6620}),
            vec({0.3474, -1.2565, -1.2034, -0.6888, -0.8075, -0.6473, -1.0165, -0.5965, -0.5443, -0.1352}),
            vec({1.6842, 0.1515, 0.2349, 0.9356, 0.2948, 0.6610, 0.2693, 0.9538, 0.9927, 1.4591})};
}

inline CaseStudy poisson_reduced() {
    return {{2, 2, 20}, {Family::poisson(), false}, parse_sequences({"AA", "AB", "BA", "BB"}),
            vec({0.0493, -0.0011, 0.5664}), vec({-0.4457, -0.4256, 0.1006}), vec({0.5444, 0.4234, 1.0322})};
}

inline CaseStudy poisson_full() {
    return {{2, 2, 20}, {Family::poisson(), true}, parse_sequences({"AA", "AB", "BA", "BB"}),
            vec({-0.0541, 0.0541, 0.6419, 0.1494}), vec({-1.0405, -0.4519, -0.1036, -0.8566}),
            vec({0.9324, 0.5600, 1.3873, 1.1553})};
}

inline std::vector<TreatmentSequence> gamma_candidates() {
    return parse_sequences({"AAB", "ABB", "ABA", "BBA", "BAA", "BAB"});
}

inline CaseStudy gamma_reduced() {
    return {{2, 3, 20}, {Family::gamma(2.0), false}, gamma_candidates(), vec({0.5455, 0.1567, 0.14, 0.1724}),
            vec({0.3590, 0.0433, -0.2324, 0.0065}), vec({0.7321, 0.3567, 0.2592, 0.338})};
}

inline CaseStudy gamma_full() {
    return {{2, 3, 20}, {Family::gamma(2.0), true}, gamma_candidates(),
            vec({0.3674, 0.2271, 0.2498, 0.1134, 0.1477}), vec({0.2135, -0.0547, 0.0245, -0.1335, -0.1621}),
            vec({0.5213, 0.5089, 0.4751, 0.3603, 0.4575})};
}

/// Simulation parameters of the third example.
inline Vector gamma_theta_reduced() { return vec({0.50, 0.15, 0.20, 0.25}); }
inline Vector gamma_theta_full() { return vec({0.50, 0.20, 0.30, 0.25, 0.15}); }

/// Weight of `seq` in a design (0 when absent).
inline double weight_of(const ApproxDesign& d, const std::string& seq) {
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.sequences[i].str() == seq) return d.weights[i];
    return 0.0;
}

}  // namespace fixtures
