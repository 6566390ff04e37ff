#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hypctrl.hpp"

namespace hypctrl::testing {

inline SystemSpec make_spec(std::size_t k, std::size_t m, std::vector<ScalarProfile> speeds, MatrixXd B,
                            std::optional<MatrixXd> C = std::nullopt) {
    const std::size_t n = k + m;
    SpeedProfile p{k, m, std::move(speeds)};
    CouplingField c = C ? CouplingField::constant(*C) : CouplingField::zero(n);
    return validate_system(p, c, ReflectionMatrix{std::move(B)});
}

inline std::vector<ScalarProfile> constant_speeds(std::initializer_list<double> values) {
    std::vector<ScalarProfile> out;
    for (double v : values) out.push_back(ScalarProfile::constant(v));
    return out;
}

/// k = m = 1, speeds (l1, l2), B = [b], optional C.
inline SystemSpec two_by_two(double l1, double l2, double b, std::optional<MatrixXd> C = std::nullopt) {
    return make_spec(1, 1, constant_speeds({l1, l2}), MatrixXd::Constant(1, 1, b), std::move(C));
}

inline MatrixXd offdiag(double c12, double c21) {
    MatrixXd C = MatrixXd::Zero(2, 2);
    C(0, 1) = c12;
    C(1, 0) = c21;
    return C;
}

inline StateField random_field(std::mt19937_64& rng, std::size_t n, std::size_t N, std::size_t modes = 6) {
    std::normal_distribution<double> g(0.0, 1.0);
    StateField s(n, N);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < modes; ++f) {
            const double a = g(rng);
            for (std::size_t q = 0; q <= N; ++q) s.values(i, q) += a * std::sin(std::numbers::pi * static_cast<double>(f + 1) * static_cast<double>(q) / static_cast<double>(N));
        }
    return s;
}

inline double bump(double x, double c, double w) {
    const double u = (x - c) / w;
    return std::abs(u) < 1.0 ? std::pow(std::cos(0.5 * std::numbers::pi * u), 2) : 0.0;
}

}  // namespace hypctrl::testing
