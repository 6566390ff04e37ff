#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hypctrl/bmatrix.hpp"
#include "hypctrl/core.hpp"
#include "hypctrl/simulator.hpp"
#include "hypctrl/times.hpp"

namespace hypctrl {

/// C^1 cubic from (v0, d0) at t = 0 to (0, 0) at t = length; exactly zero afterwards.
class HermiteRamp {
public:
    HermiteRamp() = default;
    HermiteRamp(double v0, double d0, double length) : v0_(v0), d0_(d0), length_(length) {
        if (!(length > 0.0)) throw Error(ErrorCode::OutOfDomain, "ramp length must be positive");
    }

    double operator()(double t) const {
        if (t >= length_) return 0.0;
        if (t <= 0.0) return v0_;
        const double s = t / length_;
        const double h00 = (2 * s - 3) * s * s + 1;
        const double h10 = ((s - 2) * s + 1) * s;
        return h00 * v0_ + h10 * length_ * d0_;
    }

    double derivative(double t) const {
        if (t >= length_) return 0.0;
        if (t <= 0.0) return d0_;
        const double s = t / length_;
        return (6 * s * s - 6 * s) / length_ * v0_ + (3 * s * s - 4 * s + 1) * d0_;
    }

    double length() const { return length_; }

private:
    double v0_ = 0.0;
    double d0_ = 0.0;
    double length_ = 1.0;
};

/// zeta_c and eta_c for every controlled component c = k..n-1 (zero-based).
struct AuxiliaryDynamics {
    double delta = 0.0;
    std::vector<HermiteRamp> zeta;
    std::vector<HermiteRamp> eta;

    double zeta_at(std::size_t j, double t) const { return zeta.at(j)(t); }
    double eta_at(std::size_t j, double t) const { return eta.at(j)(t); }
};

/// zeta(0) = w0_c(1), zeta'(0) = lambda_c(1, w0(1)) w0_c'(1), eta(0) = 1, eta'(0) = 0,
/// all vanishing from delta/2 on.
inline AuxiliaryDynamics make_auxiliary(const SystemSpec& spec, const StateField& w0, double delta) {
    if (!(delta > 0.0)) throw Error(ErrorCode::TimeTooShort, "delta must be positive");
    AuxiliaryDynamics aux;
    aux.delta = delta;
    const std::size_t N = w0.N();
    const double h = w0.h();
    const auto NN = static_cast<Eigen::Index>(N);
    const VectorXd trace = w0.values.col(NN);
    for (std::size_t c = spec.k(); c < spec.n(); ++c) {
        const auto cc = static_cast<Eigen::Index>(c);
        const double slope = (3 * w0.values(cc, NN) - 4 * w0.values(cc, NN - 1) + w0.values(cc, NN - 2)) / (2 * h);
        const double lam = spec.lambda(c, 1.0, std::span<const double>(trace.data(), static_cast<std::size_t>(trace.size())));
        aux.zeta.emplace_back(trace[cc], lam * slope, 0.5 * delta);
        aux.eta.emplace_back(1.0, 0.0, 0.5 * delta);
    }
    return aux;
}

struct CompatibilityReport {
    double defect0 = 0.0;
    double tolerance0 = 0.0;
    double defect1 = 0.0;
    double tolerance1 = 0.0;
    bool ok() const { return defect0 <= tolerance0 && defect1 <= tolerance1; }
};

/// Discrete compatibility of w0 with w_-(0) = B(w_+(0)) and its first-order
/// counterpart  Sigma_-(0) w_-'(0) = B Sigma_+(0) w_+'(0).
inline CompatibilityReport check_compatibility(const SystemSpec& spec, const StateField& w0, double factor = 10.0) {
    const auto k = static_cast<Eigen::Index>(spec.k()), m = static_cast<Eigen::Index>(spec.m());
    const double h = w0.h();
    const auto& v = w0.values;
    const Eigen::Index last = v.cols() - 1;
    double d1 = 0.0, d2 = 0.0;
    for (Eigen::Index q = 0; q < last; ++q) d1 = std::max(d1, (v.col(q + 1) - v.col(q)).cwiseAbs().maxCoeff() / h);
    for (Eigen::Index q = 1; q < last; ++q) d2 = std::max(d2, (v.col(q + 1) - 2 * v.col(q) + v.col(q - 1)).cwiseAbs().maxCoeff() / (h * h));
    const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());

    CompatibilityReport r;
    const VectorXd w_plus0 = v.col(0).tail(m);
    r.defect0 = (v.col(0).head(k) - spec.reflection().apply(w_plus0)).cwiseAbs().maxCoeff();
    r.tolerance0 = factor * h * d1 + 1e-12 * scale;

    const VectorXd y0 = v.col(0);
    const std::span<const double> ys(y0.data(), static_cast<std::size_t>(y0.size()));
    const VectorXd deriv = (-3 * v.col(0) + 4 * v.col(1) - v.col(2)) / (2 * h);
    VectorXd lhs(k), rhs_in(m);
    for (Eigen::Index i = 0; i < k; ++i) lhs[i] = spec.sigma(static_cast<std::size_t>(i), 0.0, ys) * deriv[i];
    for (Eigen::Index j = 0; j < m; ++j) rhs_in[j] = spec.sigma(static_cast<std::size_t>(k + j), 0.0, ys) * deriv[k + j];
    r.defect1 = (lhs - spec.B() * rhs_in).cwiseAbs().maxCoeff();
    r.tolerance1 = factor * h * spec.lambda_max() * std::max(1.0, spec.B().cwiseAbs().maxCoeff()) * d2 + 1e-12 * scale;
    return r;
}

struct FeedbackOptions {
    /// Throw CompatibilityViolated instead of warning.
    bool strict = false;
    /// Overrides delta = T - T_opt when set (must lie in (0, T - T_opt]).
    std::optional<double> delta;
    double compat_factor = 10.0;
    double quadrature_tol = 1e-10;
};

/// Records one feedback evaluation: assignment order (zero-based components)
/// and every state read (component, position, assigned-before-read flag).
struct FeedbackTrace {
    struct Read {
        std::size_t component;
        double x;
    };
    std::vector<std::size_t> assigned;
    std::vector<Read> reads;
};

class FeedbackLaw {
public:
    const EliminationMaps& maps() const { return maps_; }
    const AuxiliaryDynamics& ramps() const { return aux_; }
    const VectorXd& delays() const { return delays_; }
    double T() const { return T_; }
    double Topt() const { return Topt_; }
    double delta() const { return aux_.delta; }
    const CompatibilityReport& compatibility() const { return compat_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const SystemSpec& spec() const { return spec_; }

    /// Position at the current time of the characteristic of component l that
    /// reaches x = 0 after the delay of level j (precomputed for linear speeds).
    double argument_position(std::size_t j, std::size_t l) const { return positions_.at(j - 1).at(l - spec_.k()); }

    /// Controls w_{k+1..k+m}(t, 1) given the current state.
    VectorXd operator()(double t, const StateField& state, FeedbackTrace* trace = nullptr) const {
        const std::size_t k = spec_.k(), m = spec_.m();
        VectorXd out(static_cast<Eigen::Index>(m));
        const std::size_t levels = maps_.feedback_levels();
        std::vector<std::vector<double>> positions;
        const std::vector<std::vector<double>>* pos = &positions_;
        if (spec_.state_dependent()) {
            positions = frozen_positions(state);
            pos = &positions;
        }
        for (std::size_t j = 1; j <= levels; ++j) {
            const std::size_t c = maps_.output_component(j);
            const std::size_t slot = c - k;
            const double eta = aux_.eta_at(slot, t);
            double value = aux_.zeta_at(slot, t);
            if (eta != 1.0) {
                VectorXd args(static_cast<Eigen::Index>(maps_.arity(j)));
                for (std::size_t a = 0; a < maps_.arity(j); ++a) {
                    const double x = (*pos)[j - 1][a];
                    args[static_cast<Eigen::Index>(a)] = state.at(k + a, x);
                    if (trace) trace->reads.push_back({k + a, x});
                }
                value += (1.0 - eta) * maps_(j, args);
            }
            out[static_cast<Eigen::Index>(slot)] = value;
            if (trace) trace->assigned.push_back(c);
        }
        for (std::size_t c = k + m - levels; c-- > k;) {
            out[static_cast<Eigen::Index>(c - k)] = aux_.zeta_at(c - k, t);
            if (trace) trace->assigned.push_back(c);
        }
        return out;
    }

    BoundaryClosure closure() const {
        return [law = *this](double t, const StateField& s, const StepContext&) { return law(t, s); };
    }

private:
    friend FeedbackLaw synthesize_feedback(const SystemSpec&, double, const StateField&, const FeedbackOptions&);

    explicit FeedbackLaw(SystemSpec spec) : spec_(std::move(spec)) {}

    /// Quasilinear speeds: delays and flows with the state frozen at its current value.
    std::vector<std::vector<double>> frozen_positions(const StateField& state) const {
        const std::size_t k = spec_.k(), N = state.N();
        const double h = state.h();
        auto speed = [&](std::size_t c, std::size_t q) {
            const VectorXd y = state.values.col(static_cast<Eigen::Index>(q));
            return spec_.lambda(c, static_cast<double>(q) * h, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
        };
        const StateAccessor accessor = [&state](double, double x) { return state.at(x); };
        std::vector<std::vector<double>> out;
        for (std::size_t j = 1; j <= maps_.feedback_levels(); ++j) {
            const std::size_t c = maps_.output_component(j);
            double delay = 0.0;
            for (std::size_t q = 0; q <= N; ++q) delay += ((q == 0 || q == N) ? 0.5 * h : h) / speed(c, q);
            std::vector<double> row;
            for (std::size_t a = 0; a < maps_.arity(j); ++a) {
                row.push_back(characteristic_flow(spec_, k + a, delay, 0.0, 0.0, accessor).position);
            }
            out.push_back(std::move(row));
        }
        return out;
    }

    SystemSpec spec_;
    EliminationMaps maps_;
    AuxiliaryDynamics aux_;
    VectorXd delays_;
    std::vector<std::vector<double>> positions_;
    double T_ = 0.0;
    double Topt_ = 0.0;
    CompatibilityReport compat_;
    std::vector<std::string> warnings_;
};

/// Builds the finite-time feedback for horizon T > T_opt.
inline FeedbackLaw synthesize_feedback(const SystemSpec& spec, double T, const StateField& w0,
                                       const FeedbackOptions& options = {}) {
    const std::size_t k = spec.k(), m = spec.m(), n = spec.n();
    if (w0.n() != n) throw Error(ErrorCode::GridMismatch, "initial state has the wrong number of components");
    if (w0.N() < 2) throw Error(ErrorCode::GridMismatch, "initial state grid too coarse");
    FeedbackLaw law(spec);
    law.maps_ = boundary_elimination(spec.B());
    const VectorXd tau = travel_times(spec, options.quadrature_tol);
    law.Topt_ = optimal_time(tau, k, m);
    law.T_ = T;
    if (!(T > law.Topt_)) {
        throw Error(ErrorCode::TimeTooShort, "T = " + detail::fmt_num(T) + " does not exceed T_opt = " + detail::fmt_num(law.Topt_));
    }
    double delta = T - law.Topt_;
    if (options.delta) {
        if (!(*options.delta > 0.0) || *options.delta > delta * (1 + 1e-12)) {
            throw Error(ErrorCode::OutOfDomain, "delta must lie in (0, T - T_opt]");
        }
        delta = *options.delta;
    }
    law.aux_ = make_auxiliary(spec, w0, delta);
    law.compat_ = check_compatibility(spec, w0, options.compat_factor);
    if (!law.compat_.ok()) {
        const std::string msg = "initial data violates compatibility (defects " + detail::fmt_num(law.compat_.defect0) +
                                ", " + detail::fmt_num(law.compat_.defect1) + ")";
        if (options.strict) throw Error(ErrorCode::CompatibilityViolated, msg);
        law.warnings_.push_back(msg);
    }
    law.delays_ = tau.tail(static_cast<Eigen::Index>(m));
    for (std::size_t j = 1; j <= law.maps_.feedback_levels(); ++j) {
        const std::size_t c = law.maps_.output_component(j);
        std::vector<double> row;
        for (std::size_t a = 0; a < law.maps_.arity(j); ++a) {
            if (spec.state_dependent()) {
                row.push_back(1.0);
                continue;
            }
            row.push_back(characteristic_flow(spec, k + a, tau[static_cast<Eigen::Index>(c)], 0.0, 0.0).position);
        }
        law.positions_.push_back(std::move(row));
    }
    return law;
}

struct ClosedLoopReport {
    Trajectory trajectory;
    double initial_norm = 0.0;
    double terminal_norm = 0.0;
    double terminal_relative = 0.0;
    /// First time the sup norm drops below 1e-2 / 1e-3 of its initial value.
    std::optional<double> t_below_1e2;
    std::optional<double> t_below_1e3;
};

inline ClosedLoopReport run_closed_loop(const SystemSpec& spec, const FeedbackLaw& law, const StateField& w0, GridSpec grid,
                                        const SimulationOptions& options = {}) {
    if (grid.T <= 0.0) grid.T = law.T();
    ClosedLoopReport r;
    r.trajectory = solve_forward(spec, w0, law.closure(), grid, options);
    r.initial_norm = w0.max_norm();
    r.terminal_norm = r.trajectory.final_state.max_norm();
    r.terminal_relative = r.initial_norm > 0.0 ? r.terminal_norm / r.initial_norm : r.terminal_norm;
    for (const auto& s : r.trajectory.norms) {
        const double v = s.linf.size() ? s.linf.maxCoeff() : 0.0;
        if (!r.t_below_1e2 && v <= 1e-2 * r.initial_norm) r.t_below_1e2 = s.t;
        if (!r.t_below_1e3 && v <= 1e-3 * r.initial_norm) r.t_below_1e3 = s.t;
    }
    return r;
}

struct NullControlOptions {
    std::size_t P = 64;
    double reg = 1e-8;
    double condition_cap = 1e12;
    /// Steer to this state instead of zero.
    std::optional<StateField> target;
};

struct NullControlResult {
    ControlSignal control;
    /// ||w(T) - target|| / max(||w0||, ||target||) from re-simulation (L2).
    double residual = 0.0;
    double condition = 0.0;
    bool ill_conditioned = false;
    StateField terminal;
};

/// Piecewise-constant least-norm control: the m*P unit-pulse responses are
/// read from m shifted runs (the system is autonomous), the Tikhonov normal
/// equations are solved with a scale-relative parameter, and the result is
/// re-simulated.
inline NullControlResult null_control_openloop(const SystemSpec& spec, const StateField& w0, double T, GridSpec grid,
                                               const NullControlOptions& options = {}) {
    if (spec.state_dependent()) throw Error(ErrorCode::NotApplicable, "open-loop null control needs a linear system");
    if (!(T > 0.0)) throw Error(ErrorCode::OutOfDomain, "T must be positive");
    if (options.P < 1) throw Error(ErrorCode::OutOfDomain, "P must be >= 1");
    const std::size_t m = spec.m(), n = spec.n(), P = options.P;
    grid.T = T;
    if (w0.n() != n || w0.N() != grid.N) throw Error(ErrorCode::GridMismatch, "initial state does not match the grid");
    const std::size_t N = grid.N;
    const double h = grid.h();

    SimulationOptions sim;
    sim.steps_multiple = P;
    sim.record_snapshots = false;
    const Trajectory free = solve_forward(spec, w0, zero_control(m), grid, sim);
    const std::size_t per_segment = free.steps / P;
    sim.record_snapshots = true;
    sim.snapshot_stride = per_segment;

    std::vector<double> times(P + 1);
    for (std::size_t p = 0; p <= P; ++p) times[p] = T * static_cast<double>(p) / static_cast<double>(P);

    const auto rows = static_cast<Eigen::Index>(n * (N + 1));
    const auto cols = static_cast<Eigen::Index>(m * P);
    VectorXd weight(rows);
    for (std::size_t q = 0; q <= N; ++q)
        for (std::size_t i = 0; i < n; ++i) weight[static_cast<Eigen::Index>(q * n + i)] = std::sqrt((q == 0 || q == N) ? 0.5 * h : h);
    auto flatten = [&](const MatrixXd& v) -> VectorXd {
        VectorXd out(rows);
        for (std::size_t q = 0; q <= N; ++q)
            for (std::size_t i = 0; i < n; ++i) out[static_cast<Eigen::Index>(q * n + i)] = v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q));
        return out.cwiseProduct(weight);
    };

    MatrixXd A(rows, cols);
    const StateField zero_state(n, N);
    for (std::size_t c = 0; c < m; ++c) {
        ControlSignal pulse{times, MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(P + 1)), ControlSignal::Mode::Hold};
        pulse.values(static_cast<Eigen::Index>(c), 0) = 1.0;
        const Trajectory resp = solve_forward(spec, zero_state, control_closure(pulse), grid, sim);
        if (resp.snapshots.size() != P + 1) throw Error(ErrorCode::GridMismatch, "unexpected snapshot count in pulse run");
        for (std::size_t s = 0; s < P; ++s) A.col(static_cast<Eigen::Index>(s * m + c)) = flatten(resp.snapshots[P - s].values);
    }

    VectorXd goal = -flatten(free.final_state.values);
    double ref = w0.l2_norm();
    if (options.target) {
        if (options.target->n() != n || options.target->N() != N) throw Error(ErrorCode::GridMismatch, "target does not match the grid");
        goal += flatten(options.target->values);
        ref = std::max(ref, options.target->l2_norm());
    }

    MatrixXd normal = A.transpose() * A;
    const double mu = options.reg * std::max(normal.diagonal().maxCoeff(), std::numeric_limits<double>::min());
    normal.diagonal().array() += mu;
    const VectorXd rhs = A.transpose() * goal;
    Eigen::JacobiSVD<MatrixXd> svd(normal);
    const auto& sv = svd.singularValues();
    NullControlResult out;
    out.condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    out.ill_conditioned = !(out.condition <= options.condition_cap);
    const VectorXd coef = normal.ldlt().solve(rhs);

    out.control.times = times;
    out.control.mode = ControlSignal::Mode::Hold;
    out.control.values = MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(P + 1));
    for (std::size_t s = 0; s < P; ++s)
        for (std::size_t c = 0; c < m; ++c) out.control.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s)) = coef[static_cast<Eigen::Index>(s * m + c)];
    out.control.values.col(static_cast<Eigen::Index>(P)) = out.control.values.col(static_cast<Eigen::Index>(P - 1));

    sim.record_snapshots = false;
    const Trajectory check = solve_forward(spec, w0, control_closure(out.control), grid, sim);
    out.terminal = check.final_state;
    StateField diff = check.final_state;
    if (options.target) diff.values -= options.target->values;
    out.residual = ref > 0.0 ? diff.l2_norm() / ref : diff.l2_norm();
    return out;
}

struct WitnessProbe {
    std::size_t component = 0;  // zero-based
    double x = 0.0;
    double expected = 0.0;
};

struct WitnessResult {
    StateField w0;
    WitnessProbe probe;
    std::string description;
};

namespace detail {

inline double cos2_bump(double u, double center, double half_width) {
    const double d = (u - center) / half_width;
    if (std::abs(d) >= 1.0) return 0.0;
    const double c = std::cos(0.5 * std::numbers::pi * d);
    return c * c;
}

/// theta^{-1} for a single speed profile by bisection on a trapezoid table.
inline double travel_inverse(const SystemSpec& spec, std::size_t c, double target, std::size_t cells = 4096) {
    const std::vector<double> zero(spec.n(), 0.0);
    std::vector<double> theta(cells + 1, 0.0);
    const double dx = 1.0 / static_cast<double>(cells);
    for (std::size_t g = 1; g <= cells; ++g) {
        const double a = static_cast<double>(g - 1) * dx;
        theta[g] = theta[g - 1] + dx / 6.0 * (1.0 / spec.lambda(c, a, zero) + 4.0 / spec.lambda(c, a + 0.5 * dx, zero) + 1.0 / spec.lambda(c, a + dx, zero));
    }
    if (target <= 0.0) return 0.0;
    if (target >= theta.back()) return 1.0;
    const auto it = std::lower_bound(theta.begin(), theta.end(), target);
    const std::size_t hi = static_cast<std::size_t>(it - theta.begin()), lo = hi - 1;
    const double f = (target - theta[lo]) / (theta[hi] - theta[lo]);
    return (static_cast<double>(lo) + f) * dx;
}

inline double travel_forward(const SystemSpec& spec, std::size_t c, double x) {
    const std::vector<double> zero(spec.n(), 0.0);
    if (x <= 0.0) return 0.0;
    return adaptive_simpson([&](double s) { return 1.0 / spec.lambda(c, s, zero); }, 0.0, x, 1e-12).value;
}

}  // namespace detail

/// Initial datum whose value at a probe point at time T no control can
/// influence, for C = 0 and T < T_opt. First tries a single reflection at
/// x = 0 of the argmax pair of T_opt, then direct transport of a leftward
/// component with tau_c > T.
inline WitnessResult optimality_witness(const SystemSpec& spec, double T, std::size_t N, double amplitude = 1.0) {
    const std::size_t k = spec.k(), m = spec.m();
    if (!spec.coupling_is_zero()) throw Error(ErrorCode::NotApplicable, "witness construction needs C = 0");
    if (spec.state_dependent()) throw Error(ErrorCode::NotApplicable, "witness construction needs linear speeds");
    for (std::size_t i = 1; i <= std::min(k, m); ++i) {
        if (!trailing_minor_invertible(spec.B(), i).invertible) {
            throw Error(ErrorCode::NotApplicable, "trailing minor of order " + std::to_string(i) + " is singular");
        }
    }
    const VectorXd tau = travel_times(spec);
    const OptimalTime opt = optimal_time_detail(tau, k, m);
    if (!(T < opt.value)) throw Error(ErrorCode::NotApplicable, "T must be below T_opt = " + detail::fmt_num(opt.value));
    if (!(T > 0.0)) throw Error(ErrorCode::NotApplicable, "T must be positive");

    WitnessResult out;
    out.w0 = StateField(spec.n(), N);
    const double h = 1.0 / static_cast<double>(N);
    const MatrixXd& B = spec.B();

    if (opt.negative != OptimalTime::npos) {
        const std::size_t a = opt.negative, b = opt.positive;
        const double bab = B(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b - k));
        if (bab != 0.0) {
            double hi = T;
            for (std::size_t q = 0; q < m; ++q)
                if (B(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(q)) != 0.0) hi = std::min(hi, tau[static_cast<Eigen::Index>(k + q)]);
            const double lo = std::max(0.0, T - tau[static_cast<Eigen::Index>(a)]);
            if (hi > lo) {
                const double ta = 0.5 * (lo + hi), half = 0.25 * (hi - lo);
                for (std::size_t q = 0; q <= N; ++q) {
                    const double th = detail::travel_forward(spec, b, static_cast<double>(q) * h);
                    out.w0.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(q)) = amplitude * detail::cos2_bump(th, ta, half);
                }
                out.probe = {a, detail::travel_inverse(spec, a, T - ta), bab * amplitude};
                out.description = "reflection of w" + std::to_string(b + 1) + " into w" + std::to_string(a + 1) + " at t = " + detail::fmt_num(ta);
                return out;
            }
        }
    }
    for (std::size_t c = k; c < spec.n(); ++c) {
        const double tc = tau[static_cast<Eigen::Index>(c)];
        if (tc > T) {
            // probe where theta_c = (tc - T)/2; datum started T later along the characteristic
            const double tp = 0.5 * (tc - T), half = 0.25 * (tc - T);
            for (std::size_t q = 0; q <= N; ++q) {
                const double th = detail::travel_forward(spec, c, static_cast<double>(q) * h);
                out.w0.values(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(q)) = amplitude * detail::cos2_bump(th, tp + T, half);
            }
            out.probe = {c, detail::travel_inverse(spec, c, tp), amplitude};
            out.description = "transport of w" + std::to_string(c + 1) + " ahead of the control front";
            return out;
        }
    }
    throw Error(ErrorCode::NotApplicable, "no single-reflection or transport witness exists for this configuration");
}

struct ObservabilityReport {
    double estimate = std::numeric_limits<double>::infinity();
    std::size_t argmin = 0;
    std::vector<double> ratios;  // NaN for exhausted samples
    std::size_t evaluated = 0;
    std::size_t exhausted = 0;
    bool all_exhausted() const { return evaluated == 0; }
};

struct ObservabilityOptions {
    std::size_t samples = 32;
    std::uint64_t seed = 12345;
    std::size_t modes = 8;
    /// Samples with ||v(-T)||^2 below this fraction of ||v(0)||^2 are skipped.
    double exhausted_fraction = 1e-12;
};

/// Unit-norm terminal data: localized probes at 0.1, 0.3, ..., 0.9 for each
/// component, then `samples` random band-limited fields.
inline std::vector<MatrixXd> observability_samples(std::size_t n, std::size_t N, const ObservabilityOptions& options) {
    std::vector<MatrixXd> out;
    const double h = 1.0 / static_cast<double>(N);
    auto normalize = [&](MatrixXd v) {
        const double e = std::sqrt(l2_energy(v));
        if (e > 0.0) v /= e;
        return v;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (double center : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            MatrixXd v = MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N + 1));
            for (std::size_t q = 0; q <= N; ++q) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = detail::cos2_bump(static_cast<double>(q) * h, center, 0.1);
            out.push_back(normalize(v));
        }
    }
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t s = 0; s < options.samples; ++s) {
        MatrixXd v = MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N + 1));
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f <= options.modes; ++f) {
                const double a = gauss(rng), b = gauss(rng);
                for (std::size_t q = 0; q <= N; ++q) {
                    const double x = static_cast<double>(q) * h;
                    v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) +=
                        a * std::cos(std::numbers::pi * static_cast<double>(f) * x) + b * std::sin(std::numbers::pi * static_cast<double>(f + 1) * x);
                }
            }
        }
        out.push_back(normalize(v));
    }
    return out;
}

/// min over samples of  int_{-T}^0 |v_+(t,1)|^2 dt / int_0^1 |v(-T,x)|^2 dx.
inline ObservabilityReport verify_observability(const SystemSpec& spec, const SourceMatrix& S, double T, GridSpec grid,
                                                const ObservabilityOptions& options = {}) {
    const auto samples = observability_samples(spec.n(), grid.N, options);
    ObservabilityReport r;
    SimulationOptions sim;
    sim.record_snapshots = false;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const double initial = l2_energy(samples[s]);
        const DualTrajectory d = solve_dual(spec, S, DualState{samples[s], 0.0}, T, grid, sim);
        const double final_energy = l2_energy(d.final_state.v);
        if (!(final_energy > options.exhausted_fraction * initial)) {
            ++r.exhausted;
            r.ratios.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        const double ratio = d.observed_energy() / final_energy;
        r.ratios.push_back(ratio);
        ++r.evaluated;
        if (ratio < r.estimate) {
            r.estimate = ratio;
            r.argmin = s;
        }
    }
    return r;
}

}  // namespace hypctrl
