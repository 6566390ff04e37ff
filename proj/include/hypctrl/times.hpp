#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "hypctrl/core.hpp"

namespace hypctrl {

struct QuadratureResult {
    double value = 0.0;
    double error_estimate = 0.0;
    std::size_t evaluations = 0;
};

/// Adaptive Simpson quadrature with interval bisection. An interval is
/// accepted when |S_left + S_right - S_whole| <= 15 * tol_local; the local
/// tolerance halves with each bisection. `right_first` only changes the order
/// in which pending intervals are refined.
template <class F>
QuadratureResult adaptive_simpson(F&& f, double a, double b, double tol, bool right_first = false,
                                  int max_depth = 50) {
    if (!(tol > 0.0)) throw Error(ErrorCode::OutOfDomain, "quadrature tolerance must be positive");
    struct Interval {
        double a, b, fa, fm, fb, whole, tol;
        int depth;
    };
    QuadratureResult out;
    auto simpson = [](double a0, double b0, double fa, double fm, double fb) {
        return (b0 - a0) / 6.0 * (fa + 4.0 * fm + fb);
    };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    out.evaluations = 3;
    std::vector<Interval> stack{{a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 0}};
    while (!stack.empty()) {
        const Interval iv = stack.back();
        stack.pop_back();
        const double mid = 0.5 * (iv.a + iv.b);
        const double lm = f(0.5 * (iv.a + mid));
        const double rm = f(0.5 * (mid + iv.b));
        out.evaluations += 2;
        const double left = simpson(iv.a, mid, iv.fa, lm, iv.fm);
        const double right = simpson(mid, iv.b, iv.fm, rm, iv.fb);
        const double delta = left + right - iv.whole;
        if (std::abs(delta) <= 15.0 * iv.tol) {
            out.value += left + right + delta / 15.0;
            out.error_estimate += std::abs(delta) / 15.0;
            continue;
        }
        if (iv.depth + 1 > max_depth) {
            throw Error(ErrorCode::QuadratureNonConvergent,
                        "adaptive Simpson exceeded depth " + std::to_string(max_depth));
        }
        const Interval l{iv.a, mid, iv.fa, lm, iv.fm, left, 0.5 * iv.tol, iv.depth + 1};
        const Interval r{mid, iv.b, iv.fm, rm, iv.fb, right, 0.5 * iv.tol, iv.depth + 1};
        if (right_first) {
            stack.push_back(l);
            stack.push_back(r);
        } else {
            stack.push_back(r);
            stack.push_back(l);
        }
    }
    return out;
}

/// tau = integral over [0,1] of 1/lambda. Sampled profiles use the trapezoid
/// rule on their own grid with error bound (h^2/12) * max|second difference / h^2|.
inline QuadratureResult travel_time(const ScalarProfile& lambda, double tol = 1e-10, bool right_first = false,
                                    std::span<const double> state = {}) {
    if (lambda.kind() == ScalarProfile::Kind::Sampled) {
        const auto& s = lambda.samples();
        const std::size_t cells = s.size() - 1;
        const double h = 1.0 / static_cast<double>(cells);
        QuadratureResult out;
        double curvature = 0.0;
        for (std::size_t q = 0; q <= cells; ++q) {
            const double w = (q == 0 || q == cells) ? 0.5 * h : h;
            out.value += w / s[q];
            if (q > 0 && q < cells) {
                curvature = std::max(curvature, std::abs(1.0 / s[q - 1] - 2.0 / s[q] + 1.0 / s[q + 1]) / (h * h));
            }
        }
        out.error_estimate = h * h / 12.0 * curvature;
        out.evaluations = s.size();
        return out;
    }
    if (lambda.kind() == ScalarProfile::Kind::Constant) {
        const double v = lambda(0.0);
        return {1.0 / v, 0.0, 1};
    }
    return adaptive_simpson([&](double x) { return 1.0 / lambda(x, state); }, 0.0, 1.0, tol, right_first);
}

/// Travel times of all components (state-dependent speeds at the zero state).
inline VectorXd travel_times(const SystemSpec& spec, double tol = 1e-10, bool right_first = false) {
    VectorXd tau(spec.n());
    const std::vector<double> zero_state(spec.n(), 0.0);
    for (std::size_t i = 0; i < spec.n(); ++i) {
        tau[i] = travel_time(spec.profile().lambda[i], tol, right_first, zero_state).value;
    }
    return tau;
}

/// Value of the optimal control time and the (zero-based) travel-time indices
/// attaining it. `negative` is npos when the lone tau_{k+1} term is the max.
struct OptimalTime {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    double value = 0.0;
    std::size_t negative = npos;
    std::size_t positive = npos;
};

inline void check_tau_size(const VectorXd& tau, std::size_t k, std::size_t m) {
    if (k < 1 || m < 1 || static_cast<std::size_t>(tau.size()) != k + m) {
        throw Error(ErrorCode::DimensionMismatch, "tau must have k + m entries");
    }
}

/// m >= k: max{tau_i + tau_{m+i} (i = 1..k), tau_{k+1}};
/// m <  k: max{tau_{k+i-m} + tau_{k+i} (i = 1..m)}   (one-based indices).
inline OptimalTime optimal_time_detail(const VectorXd& tau, std::size_t k, std::size_t m) {
    check_tau_size(tau, k, m);
    OptimalTime best;
    best.value = -std::numeric_limits<double>::infinity();
    if (m >= k) {
        for (std::size_t i = 0; i < k; ++i) {
            const double v = tau[i] + tau[m + i];
            if (v > best.value) best = {v, i, m + i};
        }
        if (tau[k] > best.value) best = {tau[k], OptimalTime::npos, k};
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            const double v = tau[k + i - m] + tau[k + i];
            if (v > best.value) best = {v, k + i - m, k + i};
        }
    }
    return best;
}

inline double optimal_time(const VectorXd& tau, std::size_t k, std::size_t m) {
    return optimal_time_detail(tau, k, m).value;
}

struct LegacyTimes {
    double T1 = 0.0;
    double T2 = 0.0;
};

/// T1 = tau_k + sum_{l=1..m} tau_{k+l},  T2 = tau_k + tau_{k+1}.
inline LegacyTimes legacy_times(const VectorXd& tau, std::size_t k, std::size_t m) {
    check_tau_size(tau, k, m);
    LegacyTimes out;
    out.T1 = tau[k - 1] + tau.tail(m).sum();
    out.T2 = tau[k - 1] + tau[k];
    return out;
}

struct TimeReport {
    VectorXd tau;
    double T1 = 0.0;
    double T2 = 0.0;
    double Topt = 0.0;
    OptimalTime argmax;
    std::size_t k = 0;
    std::size_t m = 0;
};

inline TimeReport time_report(const SystemSpec& spec, double tol = 1e-10) {
    TimeReport r;
    r.k = spec.k();
    r.m = spec.m();
    r.tau = travel_times(spec, tol);
    const auto legacy = legacy_times(r.tau, r.k, r.m);
    r.T1 = legacy.T1;
    r.T2 = legacy.T2;
    r.argmax = optimal_time_detail(r.tau, r.k, r.m);
    r.Topt = r.argmax.value;
    return r;
}

}  // namespace hypctrl
