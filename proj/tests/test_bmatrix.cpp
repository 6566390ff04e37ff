#include <gtest/gtest.h>

#include "support.hpp"

using namespace hypctrl;
using namespace hypctrl::testing;

namespace {

MatrixXd gaussian(std::mt19937_64& rng, std::size_t k, std::size_t m) {
    std::normal_distribution<double> g(0.0, 1.0);
    MatrixXd B(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = g(rng);
    return B;
}

}  // namespace

TEST(TrailingMinor, SmallCases) {
    const MatrixXd A = (MatrixXd(2, 2) << 1, 2, 3, 4).finished();
    EXPECT_TRUE(trailing_minor_invertible(A, 1).invertible);
    EXPECT_TRUE(trailing_minor_invertible(A, 2).invertible);
    EXPECT_NEAR(trailing_minor_invertible(A, 2).determinant, 1 * 4 - 2 * 3, 1e-14);
    EXPECT_FALSE(trailing_minor_invertible((MatrixXd(2, 2) << 1, 2, 3, 0).finished(), 1).invertible);
}

TEST(ClassB, WorkedExamples) {
    EXPECT_TRUE(in_class_B(MatrixXd::Zero(1, 1)));
    EXPECT_FALSE(in_class_Be(MatrixXd::Zero(1, 1)));
    EXPECT_FALSE(in_class_B((MatrixXd(1, 2) << 1, 0).finished()));
    EXPECT_TRUE(in_class_B((MatrixXd(1, 2) << 1, 2).finished()));
}

TEST(ClassB, RandomGaussianMatricesAreGeneric) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
        EXPECT_TRUE(in_class_B(gaussian(rng, 3, 4)));
        EXPECT_TRUE(in_class_B(gaussian(rng, 4, 3)));
    }
}

TEST(ClassB, ExactImpliesNullWhenMExceedsK) {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 300; ++t) {
        const std::size_t k = 1 + rng() % 3, m = k + rng() % 3;
        MatrixXd B = gaussian(rng, k, m);
        if (rng() % 2) B(static_cast<Eigen::Index>(k - 1 - rng() % k), static_cast<Eigen::Index>(m - 1 - rng() % std::min(k, m))) = 0.0;
        if (m >= k + 1 && in_class_Be(B)) {
            EXPECT_TRUE(in_class_B(B));
        }
        if (m == k) {
            bool lower = true;
            for (std::size_t i = 1; i < k; ++i) lower = lower && trailing_minor_invertible(B, i).invertible;
            EXPECT_EQ(in_class_Be(B), lower && trailing_minor_invertible(B, k).invertible);
            EXPECT_EQ(in_class_B(B), lower);
        }
    }
}

TEST(Elimination, OneByTwo) {
    const EliminationMaps maps = boundary_elimination((MatrixXd(1, 2) << 1, 2).finished());
    ASSERT_EQ(maps.levels(), 1u);
    EXPECT_EQ(maps.feedback_levels(), 1u);
    EXPECT_EQ(maps.output_component(1), 2u);
    EXPECT_NEAR(maps(1, Eigen::VectorXd::Constant(1, 2.0)), -1.0, 1e-15);
}

TEST(Elimination, IdentityGivesZeroMaps) {
    const EliminationMaps maps = boundary_elimination(MatrixXd::Identity(2, 2));
    for (std::size_t j = 1; j <= maps.levels(); ++j) EXPECT_EQ(maps.coefficients(j).cwiseAbs().sum(), 0.0);
}

TEST(Elimination, NotInClassBIsRejected) {
    try {
        boundary_elimination((MatrixXd(1, 2) << 1, 0).finished());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotInClassB);
    }
}

TEST(Elimination, SubstitutionIdentityProperty) {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const std::size_t k = 1 + rng() % 3, m = 1 + rng() % 4;
        const MatrixXd B = gaussian(rng, k, m);
        const EliminationMaps maps = boundary_elimination(B);
        for (std::size_t j = 1; j <= maps.levels(); ++j) {
            VectorXd free(static_cast<Eigen::Index>(maps.arity(j)));
            for (auto& v : free) v = g(rng);
            const VectorXd w_plus = maps.complete_trace(j, free);
            // w_-(0) = B w_+(0); the last j rows must vanish
            const VectorXd rows = B.bottomRows(static_cast<Eigen::Index>(j)) * w_plus;
            const double scale = (B.bottomRows(static_cast<Eigen::Index>(j)).cwiseAbs() * w_plus.cwiseAbs()).maxCoeff();
            EXPECT_LE(rows.cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, scale)) << "k=" << k << " m=" << m << " j=" << j;
        }
    }
}

TEST(Elimination, UserMapsAreChecked) {
    const EliminationMaps maps = boundary_elimination((MatrixXd(1, 2) << 1, 2).finished());
    const auto good = maps.with_user_maps({[](const VectorXd& a) { return -0.5 * a[0] + a[0] * a[0] * a[0]; }});
    EXPECT_TRUE(good.has_user_maps());
    EXPECT_NEAR(good(1, Eigen::VectorXd::Constant(1, 1.0)), 0.5, 1e-15);
    EXPECT_THROW(maps.with_user_maps({[](const VectorXd& a) { return 1.0 - 0.5 * a[0]; }}), Error);
    EXPECT_THROW(maps.with_user_maps({[](const VectorXd& a) { return a[0]; }}), Error);
}
