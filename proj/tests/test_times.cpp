#include <gtest/gtest.h>

#include "support.hpp"

using namespace hypctrl;
using namespace hypctrl::testing;

namespace {

double single_tau(const char* expr) {
    const SystemSpec s = make_spec(1, 1, {ScalarProfile::expression(expr), ScalarProfile::constant(1.0)}, MatrixXd::Zero(1, 1));
    return travel_times(s)[0];
}

/// Direct evaluation of the optimal-time maximum with one-based indices.
double brute_force_topt(const VectorXd& tau, std::size_t k, std::size_t m) {
    auto t = [&](std::size_t one_based) { return tau[static_cast<Eigen::Index>(one_based - 1)]; };
    double best = -1.0;
    if (m >= k) {
        for (std::size_t i = 1; i <= k; ++i) best = std::max(best, t(i) + t(m + i));
        best = std::max(best, t(k + 1));
    } else {
        for (std::size_t i = 1; i <= m; ++i) best = std::max(best, t(k + i - m) + t(k + i));
    }
    return best;
}

}  // namespace

TEST(TravelTimes, ClosedForms) {
    EXPECT_NEAR(single_tau("2"), 0.5, 1e-12);
    EXPECT_NEAR(single_tau("1 + x"), std::log(2.0), 1e-10);
    EXPECT_NEAR(single_tau("1/(1+x)"), 1.5, 1e-10);
}

TEST(TravelTimes, SampledSpeedUsesTrapezoid) {
    std::vector<double> samples;
    for (int p = 0; p <= 400; ++p) samples.push_back(1.0 + p / 400.0);
    const SystemSpec s = make_spec(1, 1, {ScalarProfile::sampled(samples), ScalarProfile::constant(1.0)}, MatrixXd::Zero(1, 1));
    EXPECT_NEAR(travel_times(s)[0], std::log(2.0), 1e-5);
}

TEST(TravelTimes, SubdivisionOrderDoesNotMatter) {
    const SystemSpec s = make_spec(1, 1, {ScalarProfile::expression("1 + 0.5*sin(7*x)"), ScalarProfile::expression("1/(1+x)")}, MatrixXd::Zero(1, 1));
    const VectorXd a = travel_times(s, 1e-10, false), b = travel_times(s, 1e-10, true);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OptimalTime, WorkedValues) {
    EXPECT_DOUBLE_EQ(optimal_time(Eigen::Vector2d(1, 1), 1, 1), 2.0);
    EXPECT_DOUBLE_EQ(optimal_time(Eigen::Vector3d(1, 0.6, 0.4), 1, 2), 1.4);
    EXPECT_DOUBLE_EQ(optimal_time(Eigen::Vector3d(1, 0.5, 0.8), 2, 1), 1.3);
    const auto lt = legacy_times(Eigen::Vector3d(1, 0.6, 0.4), 1, 2);
    EXPECT_DOUBLE_EQ(lt.T1, 2.0);
    EXPECT_DOUBLE_EQ(lt.T2, 1.6);
    const auto l2 = legacy_times(Eigen::Vector3d(1, 0.5, 0.8), 2, 1);
    EXPECT_DOUBLE_EQ(l2.T1, 1.3);
    EXPECT_DOUBLE_EQ(l2.T2, 1.3);
}

TEST(OptimalTime, RandomPropertyChecks) {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.05, 3.0);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t k = 1 + rng() % 4, m = 1 + rng() % 4;
        VectorXd tau(static_cast<Eigen::Index>(k + m));
        for (auto& v : tau) v = u(rng);
        EXPECT_EQ(optimal_time(tau, k, m), brute_force_topt(tau, k, m));
        // the bounds below need the travel-time order implied by the speed ordering
        std::sort(tau.begin(), tau.begin() + static_cast<Eigen::Index>(k));
        std::sort(tau.begin() + static_cast<Eigen::Index>(k), tau.end(), std::greater<>());
        const double topt = optimal_time(tau, k, m);
        EXPECT_EQ(topt, brute_force_topt(tau, k, m));
        const auto lt = legacy_times(tau, k, m);
        EXPECT_LE(topt, lt.T1);
        EXPECT_LE(lt.T2, lt.T1);
        if (m == 1) {
            EXPECT_EQ(topt, lt.T2);
        }
        const auto d = optimal_time_detail(tau, k, m);
        const double at = (d.negative == OptimalTime::npos ? 0.0 : tau[static_cast<Eigen::Index>(d.negative)]) + tau[static_cast<Eigen::Index>(d.positive)];
        EXPECT_EQ(at, topt);
    }
}

TEST(OptimalTime, UnorderedTimesCanExceedT1) {
    // tau_1 >> tau_2 is impossible for ordered speeds; the T1 bound then fails
    const Eigen::Vector4d tau(10, 1, 1, 1);
    EXPECT_EQ(optimal_time(tau, 2, 2), 11.0);
    EXPECT_EQ(legacy_times(tau, 2, 2).T1, 3.0);
}

TEST(OptimalTime, RejectsWrongSize) {
    EXPECT_THROW(optimal_time(Eigen::Vector2d(1, 1), 1, 2), Error);
}

TEST(TimeReport, CombinesEverything) {
    const SystemSpec s = make_spec(1, 1, {ScalarProfile::expression("1+x"), ScalarProfile::constant(2.0)}, MatrixXd::Zero(1, 1));
    const TimeReport r = time_report(s);
    EXPECT_NEAR(r.tau[0], std::log(2.0), 1e-10);
    EXPECT_NEAR(r.Topt, std::log(2.0) + 0.5, 1e-10);
    EXPECT_EQ(r.argmax.negative, 0u);
    EXPECT_EQ(r.argmax.positive, 1u);
}
