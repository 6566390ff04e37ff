#include <gtest/gtest.h>

#include "support.hpp"

using namespace hypctrl;
using namespace hypctrl::testing;

namespace {

KernelSolution solve(const SystemSpec& s, std::size_t NK) {
    KernelOptions o;
    o.NK = NK;
    return solve_kernel(s, o);
}

}  // namespace

TEST(Kernel, ZeroCouplingGivesZeroKernel) {
    const SystemSpec s = make_spec(1, 2, constant_speeds({1, 1, 2}), (MatrixXd(1, 2) << 1, 2).finished());
    const KernelSolution sol = solve(s, 32);
    EXPECT_EQ(sol.K.max_abs(), 0.0);
    EXPECT_EQ(sol.diagnostics.iterations, 1u);
    const SourceMatrixReport S = source_matrix(sol.K, s, s.B());
    EXPECT_TRUE(S.S.is_zero());
}

TEST(Kernel, DiagonalIdentityExactAtSamples) {
    const double l1 = 1.0, l2 = 2.0, c12 = 0.3, c21 = -0.4;
    const SystemSpec s = two_by_two(l1, l2, 0.5, offdiag(c12, c21));
    const KernelSolution sol = solve(s, 64);
    for (std::size_t p = 0; p <= 64; ++p) {
        // K_ij(x,x)(Sigma_jj - Sigma_ii) = C_ij
        EXPECT_NEAR(sol.K.at(0, 1, p, p) * (l2 + l1), c12, 1e-14);
        EXPECT_NEAR(sol.K.at(1, 0, p, p) * (-l1 - l2), c21, 1e-14);
    }
    EXPECT_LE(sol.diagnostics.diagonal_defect, 1e-14);
}

TEST(Kernel, UnitSpeedsDiagonalValue) {
    const SystemSpec s = two_by_two(1, 1, 0.5, offdiag(0.5, 0.5));
    const KernelSolution sol = solve(s, 64);
    for (double x : {0.0, 0.25, 0.5, 1.0}) EXPECT_NEAR(sol.K(0, 1, x, x), 0.25, 1e-14);
}

TEST(Kernel, ResidualIsFirstOrder) {
    const SystemSpec s = two_by_two(1, 1, 0.5, offdiag(0.5, 0.5));
    const double r64 = solve(s, 64).diagnostics.pde_residual, r128 = solve(s, 128).diagnostics.pde_residual;
    EXPECT_GE(r128 / r64, 0.35);
    EXPECT_LE(r128 / r64, 0.65);
}

TEST(Kernel, SourceMatrixStructure) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int t = 0; t < 3; ++t) {
        MatrixXd C = MatrixXd::Zero(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) C(i, j) = u(rng);
        const SystemSpec s = make_spec(1, 2, constant_speeds({1, 1, 2}), (MatrixXd(1, 2) << 1, 2).finished(), C);
        const KernelSolution sol = solve(s, 48);
        const SourceMatrixReport S = source_matrix(sol.K, s, s.B());
        EXPECT_EQ(S.leading_columns_max, 0.0);
        EXPECT_LE(S.lower_triangle_max, 10.0 * sol.diagnostics.pde_residual);
    }
}

TEST(Kernel, FixedPointChangesDecrease) {
    const SystemSpec s = make_spec(1, 2, constant_speeds({1, 1.5, 2}), (MatrixXd(1, 2) << 1, 2).finished(),
                                   (MatrixXd(3, 3) << 0, 0.5, -0.3, 0.2, 0, 0.4, -0.6, 0.1, 0).finished());
    const KernelSolution sol = solve(s, 48);
    const auto& ch = sol.diagnostics.sup_changes;
    ASSERT_GE(ch.size(), 3u);
    for (std::size_t i = 2; i < ch.size(); ++i) EXPECT_LE(ch[i], ch[i - 1]) << i;
    EXPECT_LE(ch.back(), 1e-10);
}

TEST(Kernel, DiagonalCouplingRequiresGauge) {
    MatrixXd C = offdiag(0.2, 0.1);
    C(0, 0) = 0.5;
    const SystemSpec s = two_by_two(1, 1, 0.5, C);
    try {
        solve(s, 16);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DiagonalCouplingPresent);
    }
    const GaugedSystem g = preprocess_diagonal(s);
    EXPECT_TRUE(coupling_diagonal_free(g.spec));
    EXPECT_NO_THROW(solve(g.spec, 16));
}

TEST(Gauge, ClosedFormExponent) {
    const double c = 0.8, l1 = 2.0;
    MatrixXd C = MatrixXd::Zero(2, 2);
    C(0, 0) = c;
    const GaugedSystem g = preprocess_diagonal(two_by_two(l1, 1, 0.5, C));
    for (double x : {0.0, 0.3, 0.7, 1.0}) EXPECT_NEAR(g.gauge.exponent(0, x), -c * x / l1, 1e-12);
    EXPECT_EQ(g.gauge.exponent(1, 0.6), 0.0);
    EXPECT_TRUE(preprocess_diagonal(two_by_two(1, 1, 0.5, offdiag(1, 1))).gauge.identity());
}

TEST(Gauge, RoundTripProperty) {
    std::mt19937_64 rng(21);
    const SystemSpec s = make_spec(1, 2, {ScalarProfile::expression("1+x"), ScalarProfile::constant(1.0), ScalarProfile::expression("2+sin(x)")},
                                   (MatrixXd(1, 2) << 1, 2).finished(), MatrixXd::Constant(3, 3, 0.7));
    const GaugedSystem g = preprocess_diagonal(s);
    const StateField w = random_field(rng, 3, 300);
    EXPECT_LE((g.gauge.unapply(g.gauge.apply(w)).values - w.values).cwiseAbs().maxCoeff(), 1e-12 * w.max_norm());
}

TEST(Transform, ZeroKernelIsIdentityAndZeroMapsToZero) {
    std::mt19937_64 rng(4);
    const StateField w = random_field(rng, 2, 100);
    const Kernel K0(2, 16);
    EXPECT_EQ(transform(w, K0).values, w.values);
    EXPECT_EQ(inverse_transform(w, K0).values, w.values);
    const KernelSolution sol = solve(two_by_two(1, 1, 0.5, offdiag(0.5, 0.5)), 32);
    EXPECT_EQ(transform(StateField(2, 100), sol.K).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Transform, RoundTripProperty) {
    std::mt19937_64 rng(6);
    const KernelSolution sol = solve(two_by_two(1, 2, 0.5, offdiag(0.9, -0.7)), 64);
    for (std::size_t N : {50u, 173u, 400u}) {
        const StateField w = random_field(rng, 2, N);
        const StateField back = inverse_transform(transform(w, sol.K), sol.K);
        EXPECT_LE((back.values - w.values).cwiseAbs().maxCoeff(), 1e-10 * w.max_norm());
    }
    EXPECT_THROW(transform(StateField(3, 10), sol.K), Error);
}

TEST(TargetResidual, ZeroTrajectoryAndPlainSystem) {
    const SystemSpec s = two_by_two(1, 1, 0.5);
    EXPECT_EQ(target_residual(std::vector<StateField>{StateField(2, 50), StateField(2, 50, 0.01)}, SourceMatrix::zero(2), s), 0.0);
    auto plain = [&](std::size_t N) {
        const StateField w0 = StateField::sample(N, {[](double x) { return bump(x, 0.5, 0.3); }, [](double x) { return bump(x, 0.4, 0.3); }});
        return target_residual(solve_forward(s, w0, zero_control(1), GridSpec{N, 0.9, 0.1}), SourceMatrix::zero(2), s);
    };
    const double a = plain(200), b = plain(400);
    EXPECT_GT(a / b, 1.6);
}

TEST(TargetResidual, KernelRefinement) {
    const SystemSpec s = two_by_two(1, 1, 0.5, offdiag(0.5, 0.5));
    auto residual = [&](std::size_t N, std::size_t NK) {
        const KernelSolution sol = solve(s, NK);
        const SourceMatrix S = source_matrix(sol.K, s, s.B()).S;
        const StateField w0 = StateField::sample(N, {[](double x) { return bump(x, 0.5, 0.3); }, [](double x) { return bump(x, 0.5, 0.3); }});
        std::vector<std::vector<StateField>> pairs(4);
        SimulationOptions o;
        o.record_snapshots = false;
        const GridSpec grid{N, 0.9, 0.45};
        const double dt = grid.cfl * grid.h();
        o.observer = [&](const StateField& st, std::size_t) {
            for (std::size_t p = 0; p < 4; ++p) {
                const double t0 = 0.1 * static_cast<double>(p + 1);
                if (st.t >= t0 - 0.5 * dt && pairs[p].size() < 2) pairs[p].push_back(transform(st, sol.K));
            }
        };
        solve_forward(s, w0, zero_control(1), grid, o);
        double acc = 0.0;
        for (const auto& pr : pairs) acc += std::pow(target_residual(pr, S, s), 2);
        return std::sqrt(acc / 4.0);
    };
    const double coarse = residual(1000, 128), fine = residual(2000, 256);
    EXPECT_GE(coarse / fine, 1.6);
}

TEST(KernelCsv, HeaderAndRowCount) {
    const KernelSolution sol = solve(two_by_two(1, 1, 0.5, offdiag(0.5, 0.5)), 4);
    std::ostringstream os;
    write_kernel_csv(os, sol.K);
    const std::string text = os.str();
    EXPECT_EQ(text.substr(0, 14), "x,y,i,j,K\n0,0,");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 15 * 4);
}
