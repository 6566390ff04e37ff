#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypctrl/core.hpp"

namespace hypctrl {

/// Passed to boundary closures with every call.
struct StepContext {
    std::size_t step = 0;  // index of the time level being produced (1-based)
    double dt = 0.0;
};

/// Produces the m incoming values w_{k+1..k+m}(t,1). The state passed in
/// already carries the interior update for time t; its x = 1 entries for the
/// incoming components still hold the previous step's values.
using BoundaryClosure = std::function<VectorXd(double t, const StateField& state, const StepContext& ctx)>;

inline BoundaryClosure zero_control(std::size_t m) {
    return [m](double, const StateField&, const StepContext&) { return VectorXd::Zero(static_cast<Eigen::Index>(m)); };
}

inline BoundaryClosure control_closure(ControlSignal signal) {
    signal.validate();
    return [signal = std::move(signal)](double t, const StateField&, const StepContext&) { return signal(t); };
}

struct NormSample {
    double t = 0.0;
    VectorXd l2;    // per component
    VectorXd linf;  // per component
};

inline NormSample measure(const StateField& s) {
    NormSample out;
    out.t = s.t;
    const auto n = static_cast<Eigen::Index>(s.n());
    out.l2 = VectorXd::Zero(n);
    out.linf = VectorXd::Zero(n);
    const double h = s.h();
    const Eigen::Index last = s.values.cols() - 1;
    for (Eigen::Index i = 0; i < n; ++i) {
        double acc = 0.0;
        for (Eigen::Index q = 0; q <= last; ++q) {
            const double v = s.values(i, q);
            acc += ((q == 0 || q == last) ? 0.5 * h : h) * v * v;
        }
        out.l2[i] = std::sqrt(acc);
        out.linf[i] = s.values.row(i).cwiseAbs().maxCoeff();
    }
    return out;
}

struct SimulationOptions {
    /// Keep every `snapshot_stride`-th time level (the last level is always kept).
    std::size_t snapshot_stride = 1;
    bool record_snapshots = true;
    /// Quasilinear speeds: maximal number of step halvings before CFLViolation.
    std::size_t max_halvings = 10;
    /// |w| above this is reported as blow-up.
    double blowup = 1e150;
    /// Round the number of time steps up to a multiple of this.
    std::size_t steps_multiple = 1;
    /// Called with every time level (including t = 0).
    std::function<void(const StateField&, std::size_t step)> observer{};
};

struct Trajectory {
    GridSpec grid;
    double dt = 0.0;
    std::size_t steps = 0;
    std::vector<StateField> snapshots;
    std::vector<VectorXd> trace0;  // w(t_s, 0) for every time level
    std::vector<VectorXd> trace1;  // w(t_s, 1) for every time level
    std::vector<NormSample> norms;
    StateField final_state;

    double time(std::size_t s) const { return static_cast<double>(s) * dt; }
};

namespace detail {

inline void check_finite(const StateField& s, double blowup) {
    if (!s.all_finite() || s.max_norm() > blowup) {
        throw Error(ErrorCode::NonFiniteState, "state blew up at t = " + fmt_num(s.t));
    }
}

/// Zero-state vector reused for speed evaluation of linear specs.
inline std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

}  // namespace detail

/// First-order upwind solver for  w_t = Sigma(x[, w]) w_x + C(x) w  on [0,1] with
/// w_-(t,0) = B w_+(t,0) and w_+(t,1) supplied by `boundary_at_1`.
///
/// Components 1..k move towards x = 1 and use backward differences; components
/// k+1..n move towards x = 0 and use forward differences. The coupling is
/// applied explicitly. The time step is cfl * h / lambda_max, shrunk so that
/// the horizon is hit exactly.
inline Trajectory solve_forward(const SystemSpec& spec, const StateField& w0, const BoundaryClosure& boundary_at_1,
                                const GridSpec& grid, const SimulationOptions& options = {}) {
    grid.validate();
    const std::size_t n = spec.n(), k = spec.k(), m = spec.m(), N = grid.N;
    if (w0.n() != n || w0.N() != N) {
        throw Error(ErrorCode::GridMismatch, "initial state has shape " + std::to_string(w0.n()) + "x" +
                                                 std::to_string(w0.N() + 1) + ", grid expects " + std::to_string(n) +
                                                 "x" + std::to_string(N + 1));
    }
    if (!w0.all_finite()) throw Error(ErrorCode::NonFiniteEntry, "initial state has non-finite entries");

    const double h = grid.h();
    const bool quasilinear = spec.state_dependent();
    const bool coupled = !spec.coupling_is_zero();

    MatrixXd lam(n, N + 1);
    auto fill_speeds = [&](const MatrixXd& state) {
        std::vector<double> y(n, 0.0);
        for (std::size_t q = 0; q <= N; ++q) {
            if (quasilinear) {
                for (std::size_t i = 0; i < n; ++i) y[i] = state(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q));
            }
            for (std::size_t i = 0; i < n; ++i) lam(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = spec.lambda(i, grid.x(q), y);
        }
    };
    fill_speeds(w0.values);

    std::vector<MatrixXd> cnodes;
    if (coupled) {
        cnodes.reserve(N + 1);
        for (std::size_t q = 0; q <= N; ++q) cnodes.push_back(spec.C(grid.x(q)));
    }

    const double lambda_max = std::max(spec.lambda_max(), lam.maxCoeff());
    const double dt0 = grid.cfl * h / lambda_max;
    std::size_t steps = grid.T > 0.0 ? static_cast<std::size_t>(std::ceil(grid.T / dt0 - 1e-9)) : 0;
    const std::size_t mult = std::max<std::size_t>(1, options.steps_multiple);
    steps = (steps + mult - 1) / mult * mult;
    const double dt = steps ? grid.T / static_cast<double>(steps) : dt0;

    Trajectory traj;
    traj.grid = grid;
    traj.dt = dt;
    traj.steps = steps;
    const std::size_t stride = std::max<std::size_t>(1, options.snapshot_stride);

    StateField cur(w0.values, 0.0);
    auto record = [&](const StateField& s, std::size_t step) {
        traj.trace0.push_back(s.values.col(0));
        traj.trace1.push_back(s.values.col(static_cast<Eigen::Index>(N)));
        traj.norms.push_back(measure(s));
        if (options.record_snapshots && (step % stride == 0 || step == steps)) traj.snapshots.push_back(s);
        if (options.observer) options.observer(s, step);
    };
    record(cur, 0);

    MatrixXd next(n, N + 1);
    // One explicit upwind update of length tau; speeds in `lam` must be current.
    auto advance = [&](const MatrixXd& from, MatrixXd& to, double tau) {
        to = from;
        const double r = tau / h;
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            if (i < k) {
                for (std::size_t q = 1; q <= N; ++q) {
                    const auto qq = static_cast<Eigen::Index>(q);
                    to(ii, qq) = from(ii, qq) - r * lam(ii, qq) * (from(ii, qq) - from(ii, qq - 1));
                }
            } else {
                for (std::size_t q = 0; q < N; ++q) {
                    const auto qq = static_cast<Eigen::Index>(q);
                    to(ii, qq) = from(ii, qq) + r * lam(ii, qq) * (from(ii, qq + 1) - from(ii, qq));
                }
            }
        }
        if (coupled) {
            for (std::size_t q = 0; q <= N; ++q) {
                const auto qq = static_cast<Eigen::Index>(q);
                to.col(qq) += tau * (cnodes[q] * from.col(qq));
            }
        }
        const VectorXd plus0 = to.col(0).tail(static_cast<Eigen::Index>(m));
        to.col(0).head(static_cast<Eigen::Index>(k)) = spec.reflection().apply(plus0);
    };

    for (std::size_t s = 1; s <= steps; ++s) {
        const double t_new = static_cast<double>(s) * dt;
        if (quasilinear) {
            fill_speeds(cur.values);
            std::size_t sub = 1, halvings = 0;
            while (lam.maxCoeff() * dt / static_cast<double>(sub) > h * (1.0 + 1e-12)) {
                if (++halvings > options.max_halvings) {
                    throw Error(ErrorCode::CFLViolation, "CFL cannot be restored at t = " + detail::fmt_num(cur.t));
                }
                sub *= 2;
            }
            MatrixXd work = cur.values;
            for (std::size_t j = 0; j < sub; ++j) {
                if (j > 0) fill_speeds(work);
                advance(work, next, dt / static_cast<double>(sub));
                if (j + 1 < sub) {
                    // intermediate levels keep the incoming boundary values
                    work = next;
                }
            }
        } else {
            advance(cur.values, next, dt);
        }

        StateField candidate(next, t_new);
        VectorXd incoming;
        try {
            incoming = boundary_at_1(t_new, candidate, StepContext{s, dt});
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw Error(ErrorCode::BoundaryClosureFailure, e.what());
        }
        if (incoming.size() != static_cast<Eigen::Index>(m) || !incoming.allFinite()) {
            throw Error(ErrorCode::BoundaryClosureFailure,
                        "boundary closure returned an invalid vector at t = " + detail::fmt_num(t_new));
        }
        candidate.values.col(static_cast<Eigen::Index>(N)).tail(static_cast<Eigen::Index>(m)) = incoming;
        detail::check_finite(candidate, options.blowup);
        cur = std::move(candidate);
        record(cur, s);
    }
    traj.final_state = cur;
    return traj;
}

struct FlowOptions {
    /// RK4 step; 0 selects |t - s| / 256.
    double dt = 0.0;
    bool allow_exit = true;
};

struct FlowResult {
    double position = 0.0;
    bool exited = false;
    double exit_time = 0.0;
};

/// State accessor for quasilinear flows: (t, x) -> w(t, x).
using StateAccessor = std::function<VectorXd(double t, double x)>;

/// Integrates dx/dt = +lambda_j (j < k) or -lambda_j (j >= k) from x(s) = xi
/// to time t with classical RK4 (backwards when t < s). Leaving [0,1] clips
/// the position and reports the crossing time.
inline FlowResult characteristic_flow(const SystemSpec& spec, std::size_t j, double s, double xi, double t,
                                      const StateAccessor& state = {}, const FlowOptions& options = {}) {
    if (j >= spec.n()) throw Error(ErrorCode::IndexOutOfRange, "component index out of range");
    if (!(xi >= 0.0 && xi <= 1.0)) throw Error(ErrorCode::OutOfDomain, "flow start outside [0,1]");
    if (spec.state_dependent() && !state) {
        throw Error(ErrorCode::DimensionMismatch, "state-dependent speeds need a state accessor");
    }
    const double sign = spec.negative(j) ? 1.0 : -1.0;
    std::vector<double> zero(spec.n(), 0.0);
    auto velocity = [&](double tt, double x) {
        const double xc = std::clamp(x, 0.0, 1.0);
        if (state) {
            const VectorXd y = state(tt, xc);
            return sign * spec.lambda(j, xc, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
        }
        return sign * spec.lambda(j, xc, zero);
    };

    FlowResult out;
    out.position = xi;
    const double span = t - s;
    if (span == 0.0) return out;
    const double base = options.dt > 0.0 ? options.dt : std::abs(span) / 256.0;
    const std::size_t steps = static_cast<std::size_t>(std::ceil(std::abs(span) / base - 1e-12));
    const double dt = span / static_cast<double>(steps);
    double x = xi, tt = s;
    for (std::size_t i = 0; i < steps; ++i) {
        const double k1 = velocity(tt, x);
        const double k2 = velocity(tt + 0.5 * dt, x + 0.5 * dt * k1);
        const double k3 = velocity(tt + 0.5 * dt, x + 0.5 * dt * k2);
        const double k4 = velocity(tt + dt, x + dt * k3);
        const double xn = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (xn < 0.0 || xn > 1.0) {
            const double wall = xn < 0.0 ? 0.0 : 1.0;
            const double frac = (xn == x) ? 0.0 : (wall - x) / (xn - x);
            out.exited = true;
            out.exit_time = tt + frac * dt;
            out.position = wall;
            if (!options.allow_exit) {
                throw Error(ErrorCode::FlowLeftDomain, "characteristic left [0,1] at t = " + detail::fmt_num(out.exit_time));
            }
            return out;
        }
        x = xn;
        tt = s + static_cast<double>(i + 1) * dt;
    }
    out.position = x;
    return out;
}

/// n x n source coefficient S(x) sampled on a uniform grid of [0,1], linearly
/// interpolated between samples.
struct SourceMatrix {
    std::vector<MatrixXd> samples;

    static SourceMatrix zero(std::size_t n, std::size_t cells = 1) {
        return SourceMatrix{std::vector<MatrixXd>(cells + 1, MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)))};
    }

    std::size_t cells() const { return samples.size() - 1; }
    double x(std::size_t p) const { return static_cast<double>(p) / static_cast<double>(cells()); }

    MatrixXd operator()(double x) const {
        const double s = std::clamp(x, 0.0, 1.0) * static_cast<double>(cells());
        const std::size_t p = std::min(static_cast<std::size_t>(s), cells() - 1);
        const double f = s - static_cast<double>(p);
        return (1.0 - f) * samples[p] + f * samples[p + 1];
    }

    bool is_zero() const {
        for (const auto& s : samples) {
            if (s.cwiseAbs().maxCoeff() != 0.0) return false;
        }
        return true;
    }
};

/// State of the backward dual system at time t <= 0.
struct DualState {
    MatrixXd v;
    double t = 0.0;
};

struct DualTrajectory {
    double dt = 0.0;
    std::size_t steps = 0;
    std::vector<double> times;           // 0, -dt, ..., -T
    std::vector<VectorXd> observation;   // v_+(t, 1) at each time
    std::vector<DualState> snapshots;
    DualState final_state;               // v(-T, .)
    std::vector<double> mass;            // integral of each component sum, per time level

    /// Trapezoid value of the integral over [-T, 0] of |v_+(t,1)|^2.
    double observed_energy() const {
        double acc = 0.0;
        for (std::size_t s = 1; s < observation.size(); ++s) {
            acc += 0.5 * dt * (observation[s - 1].squaredNorm() + observation[s].squaredNorm());
        }
        return acc;
    }
};

inline double l2_energy(const MatrixXd& v) {
    const Eigen::Index last = v.cols() - 1;
    const double h = 1.0 / static_cast<double>(last);
    double acc = 0.0;
    for (Eigen::Index q = 0; q <= last; ++q) acc += ((q == 0 || q == last) ? 0.5 * h : h) * v.col(q).squaredNorm();
    return acc;
}

/// Integrates the dual system v_t = (Sigma v)_x backwards from v(0) to t = -T
/// with a conservative first-order upwind scheme. Boundary data:
/// v_-(t,1) = 0 and
///   Sigma_+(0) v_+(t,0) = -B^T Sigma_-(0) v_-(t,0) + int_0^1 S_{-+}^T v_- + S_{++}^T v_+ dx,
/// where the integral is a trapezoid sum over the current snapshot.
inline DualTrajectory solve_dual(const SystemSpec& spec, const SourceMatrix& S, const DualState& v_at_0, double T,
                                 const GridSpec& grid, const SimulationOptions& options = {}) {
    grid.validate();
    if (spec.state_dependent()) throw Error(ErrorCode::DimensionMismatch, "dual solver needs state-independent speeds");
    const std::size_t n = spec.n(), k = spec.k(), m = spec.m(), N = grid.N;
    const auto nn = static_cast<Eigen::Index>(n), kk = static_cast<Eigen::Index>(k), mm = static_cast<Eigen::Index>(m);
    if (static_cast<std::size_t>(v_at_0.v.rows()) != n || static_cast<std::size_t>(v_at_0.v.cols()) != N + 1) {
        throw Error(ErrorCode::GridMismatch, "dual terminal data does not match the grid");
    }
    if (S.samples.empty() || S.samples.front().rows() != nn) {
        throw Error(ErrorCode::DimensionMismatch, "source matrix has the wrong size");
    }
    const double h = grid.h();
    const auto zero = detail::zeros(n);
    MatrixXd lam(n, N + 1);
    for (std::size_t q = 0; q <= N; ++q)
        for (std::size_t i = 0; i < n; ++i) lam(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = spec.lambda(i, grid.x(q), zero);
    for (std::size_t j = k; j < n; ++j) {
        if (!(lam(static_cast<Eigen::Index>(j), 0) > 0.0)) {
            throw Error(ErrorCode::SingularBoundarySpeed, "lambda" + std::to_string(j + 1) + "(0) is not positive");
        }
    }

    const bool with_source = !S.is_zero();
    std::vector<MatrixXd> s_nodes;
    if (with_source) {
        for (std::size_t q = 0; q <= N; ++q) s_nodes.push_back(S(grid.x(q)));
    }
    // B^T diag(lambda_-(0)): maps v_-(t,0) to lambda_+(0) v_+(t,0) when S = 0.
    const MatrixXd reflect = spec.B().transpose() * lam.col(0).head(kk).asDiagonal();

    const double dt0 = grid.cfl * h / std::max(spec.lambda_max(), lam.maxCoeff());
    const std::size_t steps = T > 0.0 ? static_cast<std::size_t>(std::ceil(T / dt0 - 1e-9)) : 0;
    const double dt = steps ? T / static_cast<double>(steps) : dt0;
    const double r = dt / h;
    const std::size_t stride = std::max<std::size_t>(1, options.snapshot_stride);

    DualTrajectory out;
    out.dt = dt;
    out.steps = steps;
    MatrixXd cur = v_at_0.v;
    auto record = [&](const MatrixXd& v, std::size_t s) {
        const double t = -static_cast<double>(s) * dt;
        out.times.push_back(t);
        out.observation.push_back(v.col(static_cast<Eigen::Index>(N)).tail(mm));
        double mass = 0.0;
        for (Eigen::Index q = 0; q <= static_cast<Eigen::Index>(N); ++q) mass += h * v.col(q).sum();
        out.mass.push_back(mass);
        if (options.record_snapshots && (s % stride == 0 || s == steps)) out.snapshots.push_back({v, t});
    };
    record(cur, 0);

    MatrixXd next(n, N + 1);
    for (std::size_t s = 1; s <= steps; ++s) {
        next = cur;
        for (std::size_t i = 0; i < n; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            if (i < k) {
                // moves towards x = 0 in reversed time: flux lambda v taken from the right
                for (std::size_t q = 0; q < N; ++q) {
                    const auto qq = static_cast<Eigen::Index>(q);
                    next(ii, qq) = cur(ii, qq) + r * (lam(ii, qq + 1) * cur(ii, qq + 1) - lam(ii, qq) * cur(ii, qq));
                }
                next(ii, static_cast<Eigen::Index>(N)) = 0.0;
            } else {
                for (std::size_t q = 1; q <= N; ++q) {
                    const auto qq = static_cast<Eigen::Index>(q);
                    next(ii, qq) = cur(ii, qq) - r * (lam(ii, qq) * cur(ii, qq) - lam(ii, qq - 1) * cur(ii, qq - 1));
                }
            }
        }
        VectorXd rhs = reflect * next.col(0).head(kk);
        if (with_source) {
            VectorXd integral = VectorXd::Zero(mm);
            for (std::size_t q = 0; q <= N; ++q) {
                const auto qq = static_cast<Eigen::Index>(q);
                const double w = (q == 0 || q == N) ? 0.5 * h : h;
                // columns k.. of S hold S_{-+} (rows < k) and S_{++} (rows >= k)
                integral += w * (s_nodes[q].rightCols(mm).transpose() * next.col(qq));
            }
            rhs += integral;
        }
        next.col(0).tail(mm) = rhs.cwiseQuotient(lam.col(0).tail(mm));
        if (!next.allFinite() || next.cwiseAbs().maxCoeff() > options.blowup) {
            throw Error(ErrorCode::NonFiniteState, "dual state blew up at t = " + detail::fmt_num(-static_cast<double>(s) * dt));
        }
        cur.swap(next);
        record(cur, s);
    }
    out.final_state = {cur, -static_cast<double>(steps) * dt};
    return out;
}

}  // namespace hypctrl
