#include "catch_amalgamated.hpp"

#include <cmath>

#include "xover/model.hpp"

using namespace xover;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const ModelSpec kBern{Family::bernoulli(), false};
const ModelSpec kPois{Family::poisson(), false};
const ModelSpec kGamma{Family::gamma(2.0), false};

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
    Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : r) {
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

}  // namespace

TEST_CASE("layout validation", "[model]") {
    CHECK_NOTHROW(CrossoverLayout{2, 2, 1}.validate());
    CHECK_NOTHROW(CrossoverLayout{4, 2, 1}.validate());  // t > p is allowed
    CHECK_THROWS_AS((CrossoverLayout{1, 2, 1}.validate()), ValidationError);
    CHECK_THROWS_AS((CrossoverLayout{2, 1, 1}.validate()), ValidationError);
    CHECK_THROWS_AS((CrossoverLayout{2, 2, 0}.validate()), ValidationError);
    CHECK_THROWS_AS((CrossoverLayout{27, 2, 1}.validate()), ValidationError);
}

TEST_CASE("sequences parse and validate", "[model]") {
    const auto s = TreatmentSequence::parse("ABCD");
    CHECK(s.str() == "ABCD");
    CHECK(s[2] == 2);
    CHECK_NOTHROW(s.validate({4, 4, 1}));
    CHECK_THROWS_AS(s.validate({3, 4, 1}), ValidationError);  // D out of range
    CHECK_THROWS_AS(s.validate({4, 3, 1}), ValidationError);  // wrong length
    CHECK_THROWS_AS(TreatmentSequence::parse("AbC"), ValidationError);
    CHECK_THROWS_AS(TreatmentSequence::parse(""), ValidationError);
    CHECK(TreatmentSequence::parse("AB") < TreatmentSequence::parse("BA"));
}

TEST_CASE("parameter layout and names", "[model]") {
    const CrossoverLayout l{4, 4, 1};
    CHECK(parameter_count(l, {Family::bernoulli(), false}) == 7);
    CHECK(parameter_count(l, {Family::bernoulli(), true}) == 10);
    const auto names = parameter_names({2, 3, 1}, {Family::gamma(2), true});
    const std::vector<std::string> want{"mu", "period_1", "period_2", "direct_A", "carryover_A"};
    CHECK(names == want);
}

TEST_CASE("design matrix examples", "[model]") {
    SECTION("AB, full model") {
        const Matrix x = build_design_matrix(TreatmentSequence::parse("AB"), {2, 2, 1}, {Family::poisson(), true});
        CHECK(x == rows({{1, 1, 1, 0}, {1, 0, 0, 1}}));
    }
    SECTION("BA, reduced model") {
        const Matrix x = build_design_matrix(TreatmentSequence::parse("BA"), {2, 2, 1}, kPois);
        CHECK(x == rows({{1, 1, 0}, {1, 0, 1}}));
    }
    SECTION("ABCD, full model, enumerated by hand") {
        // Columns: mu, P1 P2 P3, T_A T_B T_C, C_A C_B C_C.
        const Matrix x =
            build_design_matrix(TreatmentSequence::parse("ABCD"), {4, 4, 1}, {Family::bernoulli(), true});
        const Matrix want = rows({{1, 1, 0, 0, 1, 0, 0, 0, 0, 0},
                                  {1, 0, 1, 0, 0, 1, 0, 1, 0, 0},
                                  {1, 0, 0, 1, 0, 0, 1, 0, 1, 0},
                                  {1, 0, 0, 0, 0, 0, 0, 0, 0, 1}});
        CHECK(x == want);
    }
    SECTION("sequence length mismatch") {
        CHECK_THROWS_AS(build_design_matrix(TreatmentSequence::parse("ABC"), {2, 2, 1}, kPois), ValidationError);
    }
}

TEST_CASE("design matrix structure holds for every sequence", "[model][property]") {
    for (std::size_t t = 2; t <= 4; ++t)
        for (std::size_t p = 2; p <= 4; ++p)
            for (bool carry : {false, true}) {
                const CrossoverLayout l{t, p, 1};
                const ModelSpec spec{Family::poisson(), carry};
                const ParamBlocks b = param_blocks(l, spec);
                for (const auto& seq : enumerate_sequences(l)) {
                    const Matrix x = build_design_matrix(seq, l, spec);
                    REQUIRE(x.rows() == static_cast<Eigen::Index>(p));
                    REQUIRE(x.cols() == static_cast<Eigen::Index>(b.size));
                    for (Eigen::Index i = 0; i < x.rows(); ++i) {
                        CHECK(x(i, 0) == 1.0);
                        CHECK((x.row(i).array() * (x.row(i).array() - 1.0)).abs().maxCoeff() == 0.0);
                        CHECK(x.row(i).segment(static_cast<Eigen::Index>(b.direct_begin),
                                               static_cast<Eigen::Index>(b.direct_count)).sum() <= 1.0);
                        if (carry) {
                            const double c = x.row(i).segment(static_cast<Eigen::Index>(b.carryover_begin),
                                                              static_cast<Eigen::Index>(b.carryover_count)).sum();
                            CHECK(c <= 1.0);
                            if (i == 0) CHECK(c == 0.0);
                        }
                    }
                }
            }
}

TEST_CASE("mean, variance and derivative examples", "[model]") {
    CHECK(mean_response(kBern, 0.0) == 0.5);
    CHECK(mean_response(kPois, 0.0) == 1.0);
    CHECK_THAT(mean_response(kBern, std::log(3.0)), WithinAbs(0.75, 1e-15));
    CHECK(variance_function(kBern, 0.5) == 0.25);
    CHECK(variance_function(kPois, 2.7) == 2.7);
    CHECK(variance_function(kGamma, 4.0) == 8.0);
    CHECK(mu_eta_derivative(kBern, 0.0) == 0.25);
    CHECK_THAT(mu_eta_derivative(kGamma, 1.0), WithinRel(std::exp(1.0), 1e-15));
    CHECK_THROWS_AS(variance_function(kBern, 1.0), ValidationError);
    CHECK_THROWS_AS(variance_function(kPois, 0.0), ValidationError);
    CHECK_THROWS_AS(variance_function(kGamma, -1.0), ValidationError);
    CHECK_THROWS_AS(Family::gamma(0.0), ValidationError);
}

TEST_CASE("link saturation keeps moments finite and positive", "[model]") {
    for (const auto& spec : {kBern, kPois, kGamma})
        for (double eta : {-1e6, -40.0, -39.0, 0.0, 39.0, 40.0, 1e6}) {
            const double mu = mean_response(spec, eta);
            CHECK(std::isfinite(mu));
            CHECK(variance_function(spec, mu) > 0.0);
            CHECK(mu_eta_derivative(spec, eta) > 0.0);
        }
    CHECK(mean_response(kPois, 1e6) == std::exp(40.0));
}

TEST_CASE("mu_eta_derivative matches central differences", "[model][property]") {
    // Balances truncation against cancellation where the logistic mean is near 1.
    const double h = 1e-4;
    for (const auto& spec : {kBern, kPois, kGamma})
        for (int k = -100; k <= 100; ++k) {
            const double eta = 0.1 * k;
            const double fd = (mean_response(spec, eta + h) - mean_response(spec, eta - h)) / (2.0 * h);
            INFO(spec.family.name() << " eta=" << eta);
            CHECK_THAT(mu_eta_derivative(spec, eta), WithinRel(fd, 1e-6));
        }
}

TEST_CASE("sequence enumeration", "[model]") {
    const auto two = enumerate_sequences({2, 2, 1});
    REQUIRE(two.size() == 4);
    CHECK(two[0].str() == "AA");
    CHECK(two[1].str() == "AB");
    CHECK(two[2].str() == "BA");
    CHECK(two[3].str() == "BB");
    CHECK(enumerate_sequences({3, 2, 1}).size() == 9);
    CHECK(std::is_sorted(two.begin(), two.end()));

    const std::vector<std::string> sixteen{"ACDB", "BDCA", "CBAD", "DABC", "ADCB", "BCDA", "CABD", "DBAC",
                                           "AABB", "BBAA", "CCDD", "DDCC", "AAAB", "BBBA", "CCCD", "DDDC"};
    const auto got = enumerate_sequences({4, 4, 1}, parse_sequences(sixteen));
    REQUIRE(got.size() == 16);
    for (std::size_t i = 0; i < 16; ++i) CHECK(got[i].str() == sixteen[i]);

    CHECK_THROWS_AS(enumerate_sequences({4, 4, 1}, parse_sequences({"ABCE"})), ValidationError);
    CHECK_THROWS_AS(enumerate_sequences({2, 2, 1}, parse_sequences({"AB", "AB"})), ValidationError);
    CHECK_THROWS_AS(enumerate_sequences({2, 2, 1}, std::vector<TreatmentSequence>{}), ValidationError);
    CHECK_THROWS_AS(enumerate_sequences({10, 5, 1}), ValidationError);  // 10^5 over the cap
    CHECK(enumerate_sequences({10, 5, 1}, std::nullopt, 100000).size() == 100000);
}

TEST_CASE("family parsing", "[model]") {
    CHECK(parse_family("bernoulli").kind == FamilyKind::bernoulli);
    CHECK(parse_family("poisson").kind == FamilyKind::poisson);
    CHECK(parse_family("gamma", 2.0).dispersion() == 0.5);
    CHECK_THROWS_AS(parse_family("normal"), ValidationError);
}
