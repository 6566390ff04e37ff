#include <gtest/gtest.h>

#include "support.hpp"

using namespace hypctrl;
using namespace hypctrl::testing;

namespace {

double g(double x) { return x <= 1.0 ? std::pow(std::sin(std::numbers::pi * x), 2) : 0.0; }

StateField shift_data(std::size_t N) {
    return StateField::sample(N, {[](double) { return 0.0; }, [](double x) { return g(x); }});
}

double max_shift_error(std::size_t N, double t) {
    const SystemSpec s = two_by_two(1, 1, 0.0);
    const Trajectory tr = solve_forward(s, shift_data(N), zero_control(1), GridSpec{N, 0.9, t});
    double err = 0.0;
    for (std::size_t q = 0; q <= N; ++q) {
        const double x = static_cast<double>(q) / static_cast<double>(N);
        err = std::max(err, std::abs(tr.final_state.values(1, q) - g(x + t)));
        err = std::max(err, std::abs(tr.final_state.values(0, q)));
    }
    return err;
}

}  // namespace

TEST(SolveForward, ShiftSolution) { EXPECT_LT(max_shift_error(2000, 0.5), 0.02); }

TEST(SolveForward, ZeroStaysExactlyZero) {
    const SystemSpec s = two_by_two(1, 2, 0.7, offdiag(3.0, -2.0));
    SimulationOptions o;
    const Trajectory tr = solve_forward(s, StateField(2, 100), zero_control(1), GridSpec{100, 0.9, 1.5}, o);
    for (const auto& snap : tr.snapshots) EXPECT_EQ(snap.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SolveForward, LinearityProperty) {
    std::mt19937_64 rng(3);
    const SystemSpec s = make_spec(1, 2, {ScalarProfile::expression("1+x"), ScalarProfile::constant(1.0), ScalarProfile::expression("2.5-x")},
                                   (MatrixXd(1, 2) << 0.5, -1).finished(), MatrixXd::Constant(3, 3, 0.3));
    const std::size_t N = 120;
    const GridSpec grid{N, 0.9, 1.2};
    const StateField a = random_field(rng, 3, N), b = random_field(rng, 3, N);
    ControlSignal ca{{0.0, 0.6, 1.2}, MatrixXd::Random(2, 3)}, cb{{0.0, 0.6, 1.2}, MatrixXd::Random(2, 3)};
    const double alpha = 1.7, beta = -0.4;
    ControlSignal cc{ca.times, alpha * ca.values + beta * cb.values};
    const StateField ab(alpha * a.values + beta * b.values, 0.0);
    const MatrixXd lhs = solve_forward(s, ab, control_closure(cc), grid).final_state.values;
    const MatrixXd rhs = alpha * solve_forward(s, a, control_closure(ca), grid).final_state.values +
                         beta * solve_forward(s, b, control_closure(cb), grid).final_state.values;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
}

TEST(SolveForward, FinitePropagationSpeed) {
    const std::size_t N = 400;
    const SystemSpec s = two_by_two(1, 1, 0.0);
    const StateField w0 = StateField::sample(N, {[](double x) { return bump(x, 0.5, 0.1); }, [](double x) { return bump(x, 0.5, 0.1); }});
    const GridSpec grid{N, 0.9, 0.2};
    const Trajectory tr = solve_forward(s, w0, zero_control(1), grid);
    const double h = 1.0 / N, spread = static_cast<double>(tr.steps) * h;
    for (std::size_t q = 0; q <= N; ++q) {
        const double x = q * h;
        // w1 moves right, w2 moves left; one cell per step on the upwind side only
        if (x < 0.4 - 1e-12 || x > 0.6 + spread + 1e-12) {
            EXPECT_EQ(tr.final_state.values(0, q), 0.0) << x;
        }
        if (x > 0.6 + 1e-12 || x < 0.4 - spread - 1e-12) {
            EXPECT_EQ(tr.final_state.values(1, q), 0.0) << x;
        }
    }
    EXPECT_LE(spread, grid.T / grid.cfl + 2 * h);
}

TEST(SolveForward, SelfConvergenceWithCoupling) {
    const SystemSpec s = two_by_two(1, 1, 1.0, offdiag(1.0, 1.0));
    auto run = [&](std::size_t N) {
        const StateField w0 = StateField::sample(N, {[](double x) { return std::pow(std::sin(std::numbers::pi * x), 2); },
                                                     [](double x) { return 0.5 * std::pow(std::sin(std::numbers::pi * x), 2); }});
        return solve_forward(s, w0, zero_control(1), GridSpec{N, 0.9, 0.5}).final_state;
    };
    const StateField a = run(500), b = run(1000), c = run(2000);
    auto diff = [](const StateField& coarse, const StateField& fine) {
        double e = 0.0;
        for (std::size_t q = 0; q <= coarse.N(); ++q) e += (coarse.values.col(q) - fine.values.col(2 * q)).cwiseAbs().sum();
        return e / static_cast<double>(coarse.N());
    };
    const double order = std::log2(diff(a, b) / diff(b, c));
    EXPECT_GE(order, 0.9);
    EXPECT_LE(order, 1.2);
}

TEST(SolveForward, QuasilinearSpeedsRun) {
    SpeedProfile p{1, 1, {ScalarProfile::constant(1.0), ScalarProfile::expression("1 + 0.1*w2^2")}};
    const SystemSpec s = validate_system(p, CouplingField::zero(2), ReflectionMatrix{MatrixXd::Constant(1, 1, 0.5)});
    EXPECT_TRUE(s.state_dependent());
    const StateField w0 = StateField::sample(200, {[](double) { return 0.0; }, [](double x) { return 2.0 * g(x); }});
    const Trajectory tr = solve_forward(s, w0, zero_control(1), GridSpec{200, 0.9, 0.4});
    EXPECT_TRUE(tr.final_state.all_finite());
    // faster transport than the base speed: the bump peak moves past x = 0.1
    Eigen::Index arg = 0;
    tr.final_state.values.row(1).maxCoeff(&arg);
    EXPECT_LT(static_cast<double>(arg) / 200.0, 0.1 + 0.02);
}

TEST(SolveForward, BadInputsThrow) {
    const SystemSpec s = two_by_two(1, 1, 0.0);
    EXPECT_THROW(solve_forward(s, StateField(3, 50), zero_control(1), GridSpec{50, 0.9, 0.1}), Error);
    const BoundaryClosure bad = [](double, const StateField&, const StepContext&) -> VectorXd { throw std::runtime_error("boom"); };
    try {
        solve_forward(s, StateField(2, 50), bad, GridSpec{50, 0.9, 0.1});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BoundaryClosureFailure);
    }
}

TEST(CharacteristicFlow, ClosedForms) {
    const SystemSpec s = make_spec(1, 1, {ScalarProfile::expression("1+x"), ScalarProfile::constant(1.0)}, MatrixXd::Zero(1, 1));
    EXPECT_NEAR(characteristic_flow(s, 1, 0.0, 1.0, 1.0).position, 0.0, 1e-12);
    EXPECT_NEAR(characteristic_flow(s, 1, 0.0, 1.0, 0.25).position, 0.75, 1e-12);
    EXPECT_NEAR(characteristic_flow(s, 0, 0.0, 0.0, std::log(2.0)).position, 1.0, 1e-9);
    EXPECT_NEAR(characteristic_flow(s, 0, 0.0, 0.0, 0.3).position, std::exp(0.3) - 1.0, 1e-9);
    // backwards in time
    EXPECT_NEAR(characteristic_flow(s, 0, 0.3, std::exp(0.3) - 1.0, 0.0).position, 0.0, 1e-9);
}

TEST(CharacteristicFlow, ExitIsReported) {
    const SystemSpec s = two_by_two(1, 1, 0.0);
    const FlowResult r = characteristic_flow(s, 1, 0.0, 0.5, 1.0);
    EXPECT_TRUE(r.exited);
    EXPECT_NEAR(r.exit_time, 0.5, 1e-12);
    FlowOptions strict;
    strict.allow_exit = false;
    EXPECT_THROW(characteristic_flow(s, 1, 0.0, 0.5, 1.0, {}, strict), Error);
}

TEST(CharacteristicFlow, QuasilinearAtZeroStateMatchesConstant) {
    SpeedProfile p{1, 1, {ScalarProfile::constant(1.0), ScalarProfile::expression("1 + w2^2")}};
    const SystemSpec s = validate_system(p, CouplingField::zero(2), ReflectionMatrix{MatrixXd::Zero(1, 1)});
    const StateAccessor zero = [](double, double) { return VectorXd::Zero(2); };
    EXPECT_NEAR(characteristic_flow(s, 1, 0.0, 0.8, 0.3, zero).position, 0.5, 1e-12);
}

TEST(SolveDual, ZeroStaysZero) {
    const SystemSpec s = two_by_two(1, 1, 0.5);
    const DualTrajectory d = solve_dual(s, SourceMatrix::zero(2), DualState{MatrixXd::Zero(2, 101), 0.0}, 1.0, GridSpec{100, 0.9, 1.0});
    EXPECT_EQ(d.final_state.v.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(d.observed_energy(), 0.0);
}

TEST(SolveDual, OneReflectionMatchesCharacteristics) {
    const double b = 0.7;
    const std::size_t N = 2000;
    const SystemSpec s = two_by_two(1, 1, b);
    auto f = [](double x) { return bump(x, 0.5, 0.2); };
    MatrixXd v = MatrixXd::Zero(2, N + 1);
    for (std::size_t q = 0; q <= N; ++q) v(0, q) = f(static_cast<double>(q) / N);
    SimulationOptions o;
    o.record_snapshots = false;
    const DualTrajectory d = solve_dual(s, SourceMatrix::zero(2), DualState{v, 0.0}, 2.0, GridSpec{N, 0.9, 2.0}, o);
    // reversed time s = -t: v1 reaches x = 0 at s = 0.5 -/+ 0.2, reflects into v2 with factor b, exits at x = 1 one unit later
    double err = 0.0;
    for (std::size_t i = 0; i < d.times.size(); ++i) {
        const double sr = -d.times[i];
        err = std::max(err, std::abs(d.observation[i][0] - (sr >= 1.0 ? b * f(sr - 1.0) : 0.0)));
    }
    EXPECT_LT(err, 0.02 * b);
}

TEST(SolveDual, FluxBalance) {
    const std::size_t N = 400;
    const SystemSpec s = two_by_two(1, 1, 0.0);
    MatrixXd v = MatrixXd::Zero(2, N + 1);
    for (std::size_t q = 0; q <= N; ++q) v(1, q) = bump(static_cast<double>(q) / N, 0.6, 0.3);
    const DualTrajectory d = solve_dual(s, SourceMatrix::zero(2), DualState{v, 0.0}, 1.0, GridSpec{N, 0.9, 1.0});
    const double h = 1.0 / N;
    for (std::size_t i = 1; i < d.mass.size(); ++i) {
        const double flux = d.dt * d.observation[i - 1][0];
        EXPECT_NEAR(d.mass[i] - d.mass[i - 1], -flux, 2.0 * h * d.dt) << i;
    }
}

TEST(SolveDual, SelfConvergence) {
    const SystemSpec s = two_by_two(1, 2, 0.5);
    auto run = [&](std::size_t N) {
        MatrixXd v(2, N + 1);
        for (std::size_t q = 0; q <= N; ++q) {
            const double x = static_cast<double>(q) / N;
            v(0, q) = std::pow(std::sin(std::numbers::pi * x), 2);
            v(1, q) = 0.5 * std::pow(std::sin(std::numbers::pi * x), 2);
        }
        return solve_dual(s, SourceMatrix::zero(2), DualState{v, 0.0}, 0.4, GridSpec{N, 0.9, 0.4}).final_state.v;
    };
    const MatrixXd a = run(500), b = run(1000), c = run(2000);
    auto diff = [](const MatrixXd& coarse, const MatrixXd& fine) {
        double e = 0.0;
        for (Eigen::Index q = 0; q < coarse.cols(); ++q) e += (coarse.col(q) - fine.col(2 * q)).cwiseAbs().sum();
        return e / static_cast<double>(coarse.cols() - 1);
    };
    const double order = std::log2(diff(a, b) / diff(b, c));
    EXPECT_GE(order, 0.8);
    EXPECT_LE(order, 1.2);
}

TEST(SourceMatrix, InterpolatesLinearly) {
    SourceMatrix S{{MatrixXd::Zero(2, 2), MatrixXd::Ones(2, 2)}};
    EXPECT_DOUBLE_EQ(S(0.25)(1, 1), 0.25);
    EXPECT_FALSE(S.is_zero());
    EXPECT_TRUE(SourceMatrix::zero(3, 4).is_zero());
}
