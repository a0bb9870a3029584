#include "catch_amalgamated.hpp"

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "xover/gee_variance.hpp"

using namespace xover;
using fixtures::uniform;
using fixtures::vec;
using Catch::Matchers::WithinAbs;

namespace {

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

/// Information assembled from the textbook formula with explicit dense
/// inverses: D = diag(dmu/deta) X, V = A^{1/2} R A^{1/2}, D' V^{-1} D.
Matrix dense_information(const ApproxDesign& d, const ParamVector& theta, const ModelSpec& spec,
                         const CorrelationKind& kind, const CrossoverLayout& l) {
    const auto m = static_cast<Eigen::Index>(parameter_count(l, spec));
    Matrix info = Matrix::Zero(m, m);
    const Matrix r = working_correlation(kind, l.periods);
    for (std::size_t s = 0; s < d.size(); ++s) {
        const Matrix x = build_design_matrix(d.sequences[s], l, spec);
        const Vector eta = x * theta;
        Matrix dd = x;
        Vector sd(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const double mu = mean_response(spec, eta(i));
            dd.row(i) *= mu_eta_derivative(spec, eta(i));
            sd(i) = std::sqrt(variance_function(spec, mu));
        }
        const Matrix v = sd.asDiagonal() * r * sd.asDiagonal();
        info += d.weights[s] * dd.transpose() * v.inverse() * dd;
    }
    return info;
}

ParamVector random_theta(std::mt19937_64& rng, std::size_t m, double scale = 0.5) {
    std::uniform_real_distribution<double> u(-scale, scale);
    ParamVector t(static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = u(rng);
    return t;
}

ApproxDesign random_design(std::mt19937_64& rng, const CrossoverLayout& l) {
    auto all = enumerate_sequences(l);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    ApproxDesign d;
    double s = 0.0;
    for (auto& q : all) {
        d.sequences.push_back(q);
        d.weights.push_back(u(rng));
        s += d.weights.back();
    }
    for (double& w : d.weights) w /= s;
    d.weights.back() = 1.0 - std::accumulate(d.weights.begin(), d.weights.end() - 1, 0.0);
    return d;
}

}  // namespace

TEST_CASE("design validation", "[gee_variance]") {
    const CrossoverLayout l{2, 2, 1};
    CHECK_NOTHROW(uniform({"AB", "BA"}).validate(l));
    CHECK_THROWS_AS((ApproxDesign{parse_sequences({"AB", "BA"}), {0.6, 0.5}}.validate(l)), ValidationError);
    CHECK_THROWS_AS((ApproxDesign{parse_sequences({"AB", "BA"}), {1.1, -0.1}}.validate(l)), ValidationError);
    CHECK_THROWS_AS((ApproxDesign{parse_sequences({"AB", "AB"}), {0.5, 0.5}}.validate(l)), ValidationError);
    CHECK_THROWS_AS((ApproxDesign{parse_sequences({"AB"}), {0.5, 0.5}}.validate(l)), ValidationError);
}

TEST_CASE("contrast extractor selects the direct block", "[gee_variance]") {
    const Matrix e = contrast_extractor({4, 4, 1}, {Family::bernoulli(), true});
    REQUIRE(e.rows() == 3);
    REQUIRE(e.cols() == 10);
    for (Eigen::Index k = 0; k < 3; ++k) {
        CHECK(e.row(k).sum() == 1.0);
        CHECK(e(k, 4 + k) == 1.0);
    }
}

TEST_CASE("sequence information examples", "[gee_variance]") {
    SECTION("Poisson AB at theta = 0, independence") {
        const Matrix m = sequence_information(TreatmentSequence::parse("AB"), Vector::Zero(3),
                                              {Family::poisson(), false}, CorrelationKind::independent(), {2, 2, 1});
        Matrix want(3, 3);
        want << 2, 1, 1, 1, 1, 1, 1, 1, 1;
        CHECK(max_abs(m - want) == 0.0);
    }
    SECTION("Bernoulli at theta = 0 is X'X / 4") {
        const CrossoverLayout l{4, 4, 1};
        const ModelSpec spec{Family::bernoulli(), true};
        for (const char* s : {"ABCD", "AABB", "DDDC"}) {
            const auto seq = TreatmentSequence::parse(s);
            const Matrix x = build_design_matrix(seq, l, spec);
            const Matrix m = sequence_information(seq, Vector::Zero(10), spec, CorrelationKind::independent(), l);
            CHECK(max_abs(m - 0.25 * x.transpose() * x) < 1e-15);
        }
    }
    SECTION("Gamma ABB, AR(1) 0.5: explicit tridiagonal inverse of R") {
        const CrossoverLayout l{2, 3, 1};
        const ModelSpec spec{Family::gamma(2.0), false};
        const auto seq = TreatmentSequence::parse("ABB");
        const Matrix x = build_design_matrix(seq, l, spec);
        const double a = 0.5;
        Matrix rinv(3, 3);
        rinv << 1, -a, 0, -a, 1 + a * a, -a, 0, -a, 1;
        rinv /= 1 - a * a;
        // mu = 1, dmu/deta = 1, Var = 1/kappa, so D'V^{-1}D = kappa X' R^{-1} X.
        const Matrix oracle = 2.0 * x.transpose() * rinv * x;
        Matrix frozen(4, 4);
        frozen << 10, 4, 2, 4, 4, 8, -4, 8, 2, -4, 10, -4, 4, 8, -4, 8;
        frozen /= 3.0;
        const Matrix m = sequence_information(seq, Vector::Zero(4), spec, CorrelationKind::ar1(a), l);
        CHECK(max_abs(oracle - frozen) < 1e-14);
        CHECK(max_abs(m - frozen) < 1e-13);
    }
}

TEST_CASE("design information scales and is linear in the weights", "[gee_variance][property]") {
    std::mt19937_64 rng(11);
    const CrossoverLayout l{3, 3, 1};
    const ModelSpec spec{Family::poisson(), true};
    const auto kind = CorrelationKind::cs(0.3);
    const ParamVector theta = random_theta(rng, parameter_count(l, spec));

    const auto ab = TreatmentSequence::parse("ABC");
    const ApproxDesign one{{ab}, {1.0}};
    CHECK(max_abs(design_information(one, theta, spec, kind, l) - sequence_information(ab, theta, spec, kind, l)) <
          1e-15);
    const Matrix m1 = design_information(one, theta, spec, kind, l, 1.0);
    const Matrix m20 = design_information(one, theta, spec, kind, l, 20.0);
    CHECK(max_abs(m20 - 20.0 * m1) < 1e-12 * max_abs(m20));

    const ApproxDesign half = uniform({"AB", "BA"});
    const ModelSpec red{Family::poisson(), false};
    const ParamVector t2 = vec({0.1, -0.2, 0.3});
    const Matrix want = 0.5 * (sequence_information(half.sequences[0], t2, red, kind, {2, 2, 1}) +
                               sequence_information(half.sequences[1], t2, red, kind, {2, 2, 1}));
    CHECK(max_abs(design_information(half, t2, red, kind, {2, 2, 1}) - want) < 1e-15);

    for (int rep = 0; rep < 20; ++rep) {
        const ApproxDesign d1 = random_design(rng, l), d2 = random_design(rng, l);
        const double lam = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        ApproxDesign mix = d1;
        for (std::size_t i = 0; i < mix.size(); ++i) mix.weights[i] = lam * d1.weights[i] + (1 - lam) * d2.weights[i];
        double s = std::accumulate(mix.weights.begin(), mix.weights.end(), 0.0);
        for (double& w : mix.weights) w /= s;
        const Matrix lhs = design_information(mix, theta, spec, kind, l);
        const Matrix rhs =
            lam * design_information(d1, theta, spec, kind, l) + (1 - lam) * design_information(d2, theta, spec, kind, l);
        CHECK(max_abs(lhs - rhs) < 1e-12 * max_abs(lhs));
    }
}

TEST_CASE("design information agrees with dense assembly", "[gee_variance][property]") {
    std::mt19937_64 rng(3);
    for (auto spec : {ModelSpec{Family::bernoulli(), true}, ModelSpec{Family::poisson(), false},
                      ModelSpec{Family::gamma(1.5), true}})
        for (auto kind : {CorrelationKind::independent(), CorrelationKind::cs(0.4), CorrelationKind::ar1(-0.3)}) {
            const CrossoverLayout l{3, 3, 1};
            const ParamVector theta = random_theta(rng, parameter_count(l, spec));
            const ApproxDesign d = random_design(rng, l);
            const Matrix a = design_information(d, theta, spec, kind, l);
            const Matrix b = dense_information(d, theta, spec, kind, l);
            CHECK(max_abs(a - b) < 1e-10 * max_abs(b));
            CHECK(max_abs(a - a.transpose()) == 0.0);
        }
}

TEST_CASE("model-based variance", "[gee_variance]") {
    const Matrix four = 4.0 * Matrix::Identity(3, 3);
    CHECK(max_abs(invert_information(four) - 0.25 * Matrix::Identity(3, 3)) < 1e-16);

    // {AB, BA}, Poisson reduced, theta = 0: averaged information
    // [[2,1,1],[1,1,.5],[1,.5,1]], cofactor determinant 2(.75) - (.5) + (-.5) = 0.5.
    const ApproxDesign d = uniform({"AB", "BA"});
    const ModelSpec red{Family::poisson(), false};
    const Matrix m = design_information(d, Vector::Zero(3), red, CorrelationKind::independent(), {2, 2, 1});
    const double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                       m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                       m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    CHECK_THAT(det, WithinAbs(0.5, 1e-15));
    const Matrix v = model_based_variance(d, Vector::Zero(3), red, CorrelationKind::independent(), {2, 2, 1});
    CHECK(max_abs(m * v - Matrix::Identity(3, 3)) < 1e-10);

    // Single-sequence designs cannot identify period and treatment.
    try {
        model_based_variance(uniform({"AB"}), Vector::Zero(3), red, CorrelationKind::independent(), {2, 2, 1});
        FAIL("expected non-estimable");
    } catch (const NonEstimableError& e) {
        CHECK(e.rank() == 2);
        CHECK(e.dim() == 3);
    }
}

TEST_CASE("sandwich variance", "[gee_variance][property]") {
    std::mt19937_64 rng(5);
    SECTION("collapses to model-based when truth = working") {
        for (int rep = 0; rep < 20; ++rep) {
            const CrossoverLayout l{3, 4, 1};
            const ModelSpec spec{rep % 2 ? Family::bernoulli() : Family::gamma(3.0), rep % 3 == 0};
            const ParamVector theta = random_theta(rng, parameter_count(l, spec));
            const ApproxDesign d = random_design(rng, l);
            const auto kind = rep % 2 ? CorrelationKind::cs(0.6) : CorrelationKind::ar1(0.3);
            const Matrix s = sandwich_variance(d, theta, spec, kind, kind, l);
            const Matrix m = model_based_variance(d, theta, spec, kind, l);
            CHECK(max_abs(s - m) < 1e-10 * max_abs(m));
            CHECK(max_abs(s - s.transpose()) < 1e-12);
        }
    }
    SECTION("misspecified working is no better than the correct model") {
        const ApproxDesign d = uniform({"AB", "BA"});
        const ModelSpec red{Family::poisson(), false};
        const CrossoverLayout l{2, 2, 1};
        const Matrix s =
            sandwich_variance(d, Vector::Zero(3), red, CorrelationKind::independent(), CorrelationKind::cs(0.5), l);
        const Matrix m = model_based_variance(d, Vector::Zero(3), red, CorrelationKind::cs(0.5), l);
        Eigen::SelfAdjointEigenSolver<Matrix> es_s(s), es_d(s - m);
        CHECK(es_s.eigenvalues().minCoeff() > 0.0);
        CHECK(es_d.eigenvalues().minCoeff() > -1e-12);
    }
    SECTION("scales as 1/n") {
        const ApproxDesign d = uniform({"AB", "BA", "AA"});
        const ModelSpec full{Family::poisson(), true};
        const CrossoverLayout l{2, 2, 1};
        const ParamVector theta = vec({0.1, 0.2, -0.3, 0.4});
        const Matrix s1 = sandwich_variance(d, theta, full, CorrelationKind::independent(), CorrelationKind::cs(0.3), l);
        const Matrix s10 =
            sandwich_variance(d, theta, full, CorrelationKind::independent(), CorrelationKind::cs(0.3), l, 10.0);
        CHECK(max_abs(s10 - s1 / 10.0) < 1e-12 * max_abs(s1));
    }
}

TEST_CASE("contrast variance", "[gee_variance]") {
    SECTION("t = 2 picks the (tau, tau) entry") {
        const ApproxDesign d = uniform({"AB", "BA"});
        const ModelSpec red{Family::poisson(), false};
        const Matrix v = model_based_variance(d, vec({0.1, 0.2, 0.3}), red, CorrelationKind::cs(0.2), {2, 2, 1});
        const Matrix c = contrast_variance(d, vec({0.1, 0.2, 0.3}), red, CorrelationKind::cs(0.2), {2, 2, 1});
        REQUIRE(c.rows() == 1);
        CHECK(c(0, 0) == v(2, 2));
    }
    SECTION("binary 4x4 matches the block of a dense inverse") {
        const auto cs = fixtures::binary_reduced();
        const ApproxDesign d = ApproxDesign::uniform(cs.candidates);
        const Matrix info = design_information(d, cs.estimate, cs.spec, CorrelationKind::ar1(0.4), cs.layout);
        const Matrix c = contrast_variance(d, cs.estimate, cs.spec, CorrelationKind::ar1(0.4), cs.layout);
        const Matrix dense = info.inverse().block(4, 4, 3, 3);
        REQUIRE(c.rows() == 3);
        CHECK(max_abs(c - dense) < 1e-10 * max_abs(dense));
        Eigen::SelfAdjointEigenSolver<Matrix> es(c);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
    SECTION("reordering the nuisance parameters leaves it unchanged") {
        const auto cs = fixtures::binary_full();
        const Matrix info = design_information(ApproxDesign::uniform(cs.candidates), cs.estimate, cs.spec,
                                               CorrelationKind::cs(0.3), cs.layout);
        // Swap mu with period_3 and reverse the carryover block; direct block 4..6 stays.
        Eigen::PermutationMatrix<Eigen::Dynamic> perm(10);
        Eigen::VectorXi idx(10);
        idx << 3, 1, 2, 0, 4, 5, 6, 9, 8, 7;
        perm.indices() = idx;
        const Matrix permuted = perm * info * perm.transpose();
        const Matrix a = contrast_block(invert_information(info), cs.layout, cs.spec);
        const Matrix b = contrast_block(invert_information(permuted), cs.layout, cs.spec);
        CHECK(max_abs(a - b) < 1e-10 * max_abs(a));
    }
}

TEST_CASE("D-criterion", "[gee_variance]") {
    Matrix half(1, 1);
    half << 0.5;
    CHECK_THAT(log_det_spd(half), WithinAbs(std::log(0.5), 1e-15));

    const auto cs = fixtures::binary_reduced();
    const ApproxDesign d = ApproxDesign::uniform(cs.candidates);
    const auto kind = CorrelationKind::cs(0.2);
    const double l1 = d_criterion(d, cs.estimate, cs.spec, kind, cs.layout, 1.0);
    const double l2 = d_criterion(d, cs.estimate, cs.spec, kind, cs.layout, 2.0);
    CHECK_THAT(l2 - l1, WithinAbs(-3.0 * std::log(2.0), 1e-12));

    // Dense oracle: explicit V, explicit inverses, determinant of the block.
    const Matrix dense = dense_information(d, cs.estimate, cs.spec, kind, cs.layout).inverse().block(4, 4, 3, 3);
    CHECK_THAT(l1, WithinAbs(std::log(dense.determinant()), 1e-10));

    const Matrix info = design_information(d, cs.estimate, cs.spec, kind, cs.layout);
    CHECK_THAT(d_criterion_from_information(info, cs.layout, cs.spec), WithinAbs(l1, 1e-12));
    const CriterionState st = criterion_state(info, cs.layout, cs.spec);
    CHECK_THAT(st.value, WithinAbs(l1, 1e-12));
    // sum_w p_w tr(G M_w) = t - 1.
    double total = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        total += d.weights[i] *
                 (st.sensitivity * sequence_information(d.sequences[i], cs.estimate, cs.spec, kind, cs.layout)).trace();
    CHECK_THAT(total, WithinAbs(3.0, 1e-10));
}

namespace {

/// theta' such that relabeling treatments by `perm` reproduces every linear
/// predictor: least squares over all t^p sequences, exact by construction.
ParamVector relabeled_theta(const ParamVector& theta, const std::vector<int>& perm, const CrossoverLayout& l,
                            const ModelSpec& spec) {
    const auto all = enumerate_sequences(l);
    const auto p = static_cast<Eigen::Index>(l.periods);
    const auto m = static_cast<Eigen::Index>(parameter_count(l, spec));
    Matrix xs(static_cast<Eigen::Index>(all.size()) * p, m);
    Vector eta(xs.rows());
    for (std::size_t s = 0; s < all.size(); ++s) {
        std::vector<int> mapped;
        for (int k : all[s].treatments()) mapped.push_back(perm[static_cast<std::size_t>(k)]);
        xs.middleRows(static_cast<Eigen::Index>(s) * p, p) = build_design_matrix(TreatmentSequence(mapped), l, spec);
        eta.segment(static_cast<Eigen::Index>(s) * p, p) = build_design_matrix(all[s], l, spec) * theta;
    }
    const ParamVector out = xs.colPivHouseholderQr().solve(eta);
    REQUIRE((xs * out - eta).cwiseAbs().maxCoeff() < 1e-10);
    return out;
}

}  // namespace

TEST_CASE("D-criterion is invariant to relabeling treatments", "[gee_variance][property]") {
    std::mt19937_64 rng(17);
    for (std::size_t t : {2u, 3u})
        for (bool carry : {false, true}) {
            const CrossoverLayout l{t, 3, 1};
            const ModelSpec spec{Family::bernoulli(), carry};
            std::vector<int> perm(t);
            std::iota(perm.begin(), perm.end(), 0);
            do {
                const ParamVector theta = random_theta(rng, parameter_count(l, spec));
                const ApproxDesign d = random_design(rng, l);
                ApproxDesign moved = d;
                for (auto& s : moved.sequences) {
                    std::vector<int> mapped;
                    for (int k : s.treatments()) mapped.push_back(perm[static_cast<std::size_t>(k)]);
                    s = TreatmentSequence(mapped);
                }
                const ParamVector theta2 = relabeled_theta(theta, perm, l, spec);
                const auto kind = CorrelationKind::ar1(0.35);
                CHECK_THAT(d_criterion(moved, theta2, spec, kind, l), WithinAbs(d_criterion(d, theta, spec, kind, l), 1e-9));
            } while (std::next_permutation(perm.begin(), perm.end()));
        }
}
