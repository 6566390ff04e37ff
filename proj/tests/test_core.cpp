#include <gtest/gtest.h>

#include "support.hpp"

using namespace hypctrl;
using namespace hypctrl::testing;

TEST(Expression, ArithmeticAndFunctions) {
    EXPECT_DOUBLE_EQ(Expression::parse("1 + 2*3^2")(0.0), 19.0);
    EXPECT_DOUBLE_EQ(Expression::parse("-2^2")(0.0), -4.0);
    EXPECT_NEAR(Expression::parse("exp(-100*(x-0.5)^2)")(0.5), 1.0, 1e-15);
    EXPECT_NEAR(Expression::parse("sin(pi*x)")(0.5), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(Expression::parse("max(x, 2) + min(1, t)")(Bindings{3.0, 0.5, {}}), 3.5);
    const std::vector<double> w{2.0, 3.0};
    EXPECT_DOUBLE_EQ(Expression::parse("1 + 0.1*w2^2")(Bindings{0.0, 0.0, w}), 1.9);
    EXPECT_EQ(Expression::parse("w2 + x").max_state_index(), 2u);
    EXPECT_TRUE(Expression::parse("2*pi").is_constant());
}

TEST(Expression, RejectsMalformedText) {
    for (const char* bad : {"1 +", "foo(x)", "(x", "x y", "", "w0"}) {
        try {
            Expression::parse(bad);
            ADD_FAILURE() << "accepted '" << bad << "'";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::ParseError) << bad;
        }
    }
}

TEST(ValidateSystem, ConstantSpeedsAreValid) {
    const SystemSpec s = two_by_two(1, 1, 0.5);
    EXPECT_EQ(s.k(), 1u);
    EXPECT_EQ(s.m(), 1u);
    EXPECT_DOUBLE_EQ(s.lambda_min(), 1.0);
    EXPECT_TRUE(s.coupling_is_zero());
}

TEST(ValidateSystem, SignChangeIsAnOrderingViolation) {
    SpeedProfile p{1, 1, {ScalarProfile::constant(1.0), ScalarProfile::expression("1 - 2*x")}};
    try {
        validate_system(p, CouplingField::zero(2), ReflectionMatrix{MatrixXd::Zero(1, 1)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::OrderingViolated);
    }
}

TEST(ValidateSystem, ThreeByThreeOnesCoupling) {
    const SystemSpec s = make_spec(2, 1, constant_speeds({2, 1, 3}), MatrixXd::Ones(2, 1), MatrixXd::Ones(3, 3));
    // max absolute entry of C
    EXPECT_DOUBLE_EQ(s.stats().coupling_norm_inf, 1.0);
}

TEST(ValidateSystem, DimensionAndFinitenessChecks) {
    SpeedProfile p{1, 1, constant_speeds({1, 1})};
    auto code = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::IllConditionedSystem;
    };
    EXPECT_EQ(code([&] { validate_system(p, CouplingField::zero(3), ReflectionMatrix{MatrixXd::Zero(1, 1)}); }), ErrorCode::DimensionMismatch);
    EXPECT_EQ(code([&] { validate_system(p, CouplingField::zero(2), ReflectionMatrix{MatrixXd::Zero(2, 1)}); }), ErrorCode::DimensionMismatch);
    MatrixXd B(1, 1);
    B(0, 0) = std::nan("");
    EXPECT_EQ(code([&] { validate_system(p, CouplingField::zero(2), ReflectionMatrix{B}); }), ErrorCode::NonFiniteEntry);
    SpeedProfile zero{1, 1, {ScalarProfile::constant(1.0), ScalarProfile::expression("x")}};
    EXPECT_EQ(code([&] { validate_system(zero, CouplingField::zero(2), ReflectionMatrix{MatrixXd::Zero(1, 1)}); }), ErrorCode::OrderingViolated);
}

TEST(ValidateSystem, IsIdempotent) {
    const SystemSpec s = make_spec(1, 2, {ScalarProfile::expression("1+x"), ScalarProfile::constant(1.0), ScalarProfile::expression("2 + sin(3*x)")},
                                   (MatrixXd(1, 2) << 1, 2).finished(), MatrixXd::Constant(3, 3, 0.2));
    const SystemSpec again = validate_system(s);
    EXPECT_EQ(again.stats(), s.stats());
    EXPECT_EQ(again.B(), s.B());
    for (double x : {0.0, 0.37, 1.0}) EXPECT_EQ(eval_speeds(again, x), eval_speeds(s, x));
}

TEST(EvalSpeeds, SignedValues) {
    const SystemSpec s = two_by_two(1, 2, 0.0);
    const VectorXd v = eval_speeds(s, 0.3);
    EXPECT_DOUBLE_EQ(v[0], -1.0);
    EXPECT_DOUBLE_EQ(v[1], 2.0);
    const SystemSpec lin = make_spec(1, 1, {ScalarProfile::constant(1.0), ScalarProfile::expression("1+x")}, MatrixXd::Zero(1, 1));
    EXPECT_DOUBLE_EQ(eval_speeds(lin, 1.0)[1], 2.0);
}

TEST(EvalSpeeds, SampledProfileInterpolates) {
    const std::vector<double> samples{1.0, 2.0, 4.0, 3.0, 5.0};
    const SystemSpec s = make_spec(1, 1, {ScalarProfile::sampled(samples), ScalarProfile::constant(1.0)}, MatrixXd::Zero(1, 1));
    for (std::size_t p = 0; p < samples.size(); ++p) EXPECT_EQ(eval_speeds(s, static_cast<double>(p) / 4.0)[0], -samples[p]);
    EXPECT_DOUBLE_EQ(eval_speeds(s, 0.375)[0], -3.0);
}

TEST(EvalSpeeds, SignPatternProperty) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 1 + rng() % 3, m = 1 + rng() % 3;
        // a shared perturbation keeps the strict ordering inside each group
        const double b = 0.1 * u(rng);
        const std::string wiggle = " + " + std::to_string(b) + "*sin(5*x)";
        std::vector<double> neg(k), pos(m);
        double c = 0.5;
        for (auto& v : pos) v = (c += u(rng));
        c = 0.5;
        for (auto& v : neg) v = (c += u(rng));
        std::reverse(neg.begin(), neg.end());
        std::vector<ScalarProfile> speeds;
        for (double v : neg) speeds.push_back(ScalarProfile::expression(std::to_string(v) + wiggle));
        for (double v : pos) speeds.push_back(ScalarProfile::expression(std::to_string(v) + wiggle));
        const SystemSpec s = make_spec(k, m, speeds, MatrixXd::Zero(k, m));
        for (std::size_t q = 0; q <= 64; ++q) {
            const VectorXd v = eval_speeds(s, q / 64.0);
            for (std::size_t i = 0; i < k + m; ++i) {
                if (i < k) {
                    EXPECT_LT(v[i], 0.0);
                } else {
                    EXPECT_GT(v[i], 0.0);
                }
            }
        }
    }
}

TEST(CouplingField, GammaScalesAndSampledIsPiecewiseConstant) {
    const CouplingField c = CouplingField::constant(offdiag(1.0, 2.0), 0.5);
    EXPECT_DOUBLE_EQ(c(0.3)(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(c.with_gamma(2.0)(0.3)(0, 1), 2.0);
    const CouplingField s = CouplingField::sampled({offdiag(1, 0), offdiag(3, 0)});
    EXPECT_DOUBLE_EQ(s(0.25)(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(s(0.75)(0, 1), 3.0);
}

TEST(StateField, NormsAndInterpolation) {
    const StateField s = StateField::sample(100, {[](double x) { return x; }, [](double) { return 1.0; }});
    EXPECT_DOUBLE_EQ(s.at(0, 0.255), 0.255);
    EXPECT_DOUBLE_EQ(s.max_norm(), 1.0);
    // trapezoid of x^2 + 1 on 100 cells: 1/3 + h^2/6 + 1
    EXPECT_NEAR(s.l2_norm() * s.l2_norm(), 4.0 / 3.0 + 1e-4 / 6.0, 1e-14);
}

TEST(ControlSignal, LinearAndHold) {
    ControlSignal c{{0.0, 1.0, 2.0}, (MatrixXd(1, 3) << 0.0, 2.0, 4.0).finished()};
    EXPECT_DOUBLE_EQ(c(0.5)[0], 1.0);
    c.mode = ControlSignal::Mode::Hold;
    EXPECT_DOUBLE_EQ(c(0.5)[0], 0.0);
    EXPECT_DOUBLE_EQ(c(1.5)[0], 2.0);
    EXPECT_DOUBLE_EQ(c(1.0)[0], 0.0);
}
