#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hypctrl/error.hpp"
#include "hypctrl/expression.hpp"

namespace hypctrl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Piecewise-linear interpolation of samples on the uniform grid of [0,1].
inline double interp_uniform(std::span<const double> samples, double x) {
    const std::size_t cells = samples.size() - 1;
    if (cells == 0) return samples[0];
    const double s = std::clamp(x, 0.0, 1.0) * static_cast<double>(cells);
    const std::size_t i = std::min(static_cast<std::size_t>(s), cells - 1);
    const double f = s - static_cast<double>(i);
    if (f == 0.0) return samples[i];
    return (1.0 - f) * samples[i] + f * samples[i + 1];
}

}  // namespace detail

/// One positive characteristic speed lambda_i as a function of position and,
/// optionally, of the state vector.
class ScalarProfile {
public:
    using Callable = std::function<double(double x, std::span<const double> y)>;

    enum class Kind { Constant, Expression, Sampled, Callable };

    static ScalarProfile constant(double value) {
        ScalarProfile p;
        p.kind_ = Kind::Constant;
        p.value_ = value;
        return p;
    }

    static ScalarProfile expression(Expression e) {
        ScalarProfile p;
        p.kind_ = e.is_constant() ? Kind::Constant : Kind::Expression;
        p.value_ = e.is_constant() ? e(0.0) : 0.0;
        p.state_dependent_ = e.uses_state();
        p.expr_ = std::move(e);
        return p;
    }

    static ScalarProfile expression(std::string_view text) { return expression(Expression::parse(text)); }

    /// Samples on the uniform grid x_q = q / (samples.size()-1), interpolated linearly.
    static ScalarProfile sampled(std::vector<double> samples) {
        if (samples.size() < 2) {
            throw Error(ErrorCode::DimensionMismatch, "sampled profile needs at least two samples");
        }
        ScalarProfile p;
        p.kind_ = Kind::Sampled;
        p.samples_ = std::move(samples);
        return p;
    }

    static ScalarProfile callable(Callable f, bool state_dependent = false) {
        ScalarProfile p;
        p.kind_ = Kind::Callable;
        p.fn_ = std::move(f);
        p.state_dependent_ = state_dependent;
        return p;
    }

    double operator()(double x, std::span<const double> y = {}) const {
        switch (kind_) {
            case Kind::Constant: return value_;
            case Kind::Expression: return expr_(Bindings{x, 0.0, y});
            case Kind::Sampled: return detail::interp_uniform(samples_, x);
            case Kind::Callable: return fn_(x, y);
        }
        return std::nan("");
    }

    Kind kind() const { return kind_; }
    bool state_dependent() const { return state_dependent_; }
    const std::vector<double>& samples() const { return samples_; }
    std::string describe() const {
        switch (kind_) {
            case Kind::Constant: return detail::fmt_num(value_);
            case Kind::Expression: return expr_.text();
            case Kind::Sampled: return "sampled(" + std::to_string(samples_.size()) + ")";
            case Kind::Callable: return "callable";
        }
        return "?";
    }

private:
    Kind kind_ = Kind::Constant;
    double value_ = 0.0;
    bool state_dependent_ = false;
    Expression expr_;
    std::vector<double> samples_;
    Callable fn_;
};

/// The n = k + m characteristic speeds; components 1..k travel towards x = 1
/// (signed speed -lambda_i), components k+1..k+m towards x = 0.
struct SpeedProfile {
    std::size_t k = 0;
    std::size_t m = 0;
    std::vector<ScalarProfile> lambda;

    std::size_t n() const { return k + m; }
    bool state_dependent() const {
        return std::any_of(lambda.begin(), lambda.end(), [](const auto& l) { return l.state_dependent(); });
    }
};

/// Matrix-valued coupling C(x) scaled by gamma.
class CouplingField {
public:
    using Callable = std::function<MatrixXd(double x)>;

    static CouplingField zero(std::size_t n) { return constant(MatrixXd::Zero(n, n)); }

    static CouplingField constant(MatrixXd c, double gamma = 1.0) {
        CouplingField f;
        f.n_ = static_cast<std::size_t>(c.rows());
        f.constant_ = std::move(c);
        f.gamma_ = gamma;
        if (f.constant_.rows() != f.constant_.cols()) {
            throw Error(ErrorCode::DimensionMismatch, "coupling matrix must be square");
        }
        return f;
    }

    /// Entry-wise expressions in x; row-major, n*n entries.
    static CouplingField expressions(std::size_t n, std::vector<Expression> entries, double gamma = 1.0) {
        if (entries.size() != n * n) {
            throw Error(ErrorCode::DimensionMismatch, "coupling needs n*n expressions");
        }
        const bool all_const = std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.is_constant(); });
        if (all_const) {
            MatrixXd c(n, n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) c(i, j) = entries[i * n + j](0.0);
            return constant(std::move(c), gamma);
        }
        CouplingField f;
        f.n_ = n;
        f.entries_ = std::move(entries);
        f.gamma_ = gamma;
        return f;
    }

    /// Piecewise-constant values on `cells.size()` equal cells of [0,1].
    static CouplingField sampled(std::vector<MatrixXd> cells, double gamma = 1.0) {
        if (cells.empty()) throw Error(ErrorCode::DimensionMismatch, "sampled coupling needs cells");
        CouplingField f;
        f.n_ = static_cast<std::size_t>(cells.front().rows());
        f.cells_ = std::move(cells);
        f.gamma_ = gamma;
        return f;
    }

    static CouplingField callable(std::size_t n, Callable fn, double gamma = 1.0) {
        CouplingField f;
        f.n_ = n;
        f.fn_ = std::move(fn);
        f.gamma_ = gamma;
        return f;
    }

    MatrixXd operator()(double x) const { return gamma_ * raw(x); }

    std::size_t n() const { return n_; }
    double gamma() const { return gamma_; }
    CouplingField with_gamma(double gamma) const {
        CouplingField f = *this;
        f.gamma_ = gamma;
        return f;
    }
    /// Constant field (no x dependence); lets solvers skip re-evaluation.
    bool is_constant() const { return entries_.empty() && cells_.empty() && !fn_; }

private:
    MatrixXd raw(double x) const {
        if (fn_) return fn_(x);
        if (!cells_.empty()) {
            const std::size_t nc = cells_.size();
            const std::size_t idx = std::min(static_cast<std::size_t>(std::clamp(x, 0.0, 1.0) * nc), nc - 1);
            return cells_[idx];
        }
        if (!entries_.empty()) {
            MatrixXd c(n_, n_);
            for (std::size_t i = 0; i < n_; ++i)
                for (std::size_t j = 0; j < n_; ++j) c(i, j) = entries_[i * n_ + j](x);
            return c;
        }
        return constant_;
    }

    std::size_t n_ = 0;
    double gamma_ = 1.0;
    MatrixXd constant_;
    std::vector<Expression> entries_;
    std::vector<MatrixXd> cells_;
    Callable fn_;
};

/// Boundary relation w_-(t,0) = B w_+(t,0), optionally through a nonlinear map
/// whose Jacobian at 0 must equal B.
struct ReflectionMatrix {
    using NonlinearMap = std::function<VectorXd(const VectorXd&)>;

    MatrixXd B;
    NonlinearMap nonlinear{};

    VectorXd apply(const VectorXd& w_plus) const { return nonlinear ? nonlinear(w_plus) : VectorXd(B * w_plus); }
};

struct GridSpec {
    std::size_t N = 200;
    double cfl = 0.9;
    double T = 1.0;

    double h() const { return 1.0 / static_cast<double>(N); }
    double x(std::size_t q) const { return static_cast<double>(q) * h(); }

    void validate() const {
        if (N < 8) throw Error(ErrorCode::DimensionMismatch, "grid needs N >= 8, got " + std::to_string(N));
        if (!(cfl > 0.0 && cfl <= 1.0)) throw Error(ErrorCode::OutOfDomain, "cfl must lie in (0,1]");
        if (!(T >= 0.0) || !std::isfinite(T)) throw Error(ErrorCode::OutOfDomain, "time horizon must be >= 0");
    }
};

/// w(t, .) sampled at x_q = q/N, one row per component.
struct StateField {
    MatrixXd values;
    double t = 0.0;

    StateField() = default;
    StateField(std::size_t n, std::size_t N, double time = 0.0) : values(MatrixXd::Zero(n, N + 1)), t(time) {}
    StateField(MatrixXd v, double time) : values(std::move(v)), t(time) {}

    std::size_t n() const { return static_cast<std::size_t>(values.rows()); }
    std::size_t N() const { return static_cast<std::size_t>(values.cols()) - 1; }
    double h() const { return 1.0 / static_cast<double>(N()); }

    /// Linear interpolation of component i at x in [0,1].
    double at(std::size_t i, double x) const {
        const double s = std::clamp(x, 0.0, 1.0) * static_cast<double>(N());
        const std::size_t q = std::min(static_cast<std::size_t>(s), N() - 1);
        const double f = s - static_cast<double>(q);
        return (1.0 - f) * values(i, q) + f * values(i, q + 1);
    }
    VectorXd at(double x) const {
        VectorXd out(n());
        for (std::size_t i = 0; i < n(); ++i) out[i] = at(i, x);
        return out;
    }

    bool all_finite() const { return values.allFinite(); }

    /// Trapezoid L2 norm over all components.
    double l2_norm() const {
        const double hh = h();
        double acc = 0.0;
        for (Eigen::Index q = 0; q < values.cols(); ++q) {
            const double wq = (q == 0 || q == values.cols() - 1) ? 0.5 * hh : hh;
            acc += wq * values.col(q).squaredNorm();
        }
        return std::sqrt(acc);
    }
    double max_norm() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }

    /// Samples one function of x per component.
    static StateField sample(std::size_t N, const std::vector<std::function<double(double)>>& fns, double t = 0.0) {
        StateField s(fns.size(), N, t);
        for (std::size_t i = 0; i < fns.size(); ++i)
            for (std::size_t q = 0; q <= N; ++q) s.values(i, q) = fns[i](static_cast<double>(q) / static_cast<double>(N));
        return s;
    }
};

/// m boundary inputs sampled in time. Linear mode interpolates between
/// samples; Hold mode keeps value p on (times[p], times[p+1]].
struct ControlSignal {
    enum class Mode { Linear, Hold };

    std::vector<double> times;
    MatrixXd values;  // m x times.size()
    Mode mode = Mode::Linear;

    std::size_t m() const { return static_cast<std::size_t>(values.rows()); }

    void validate() const {
        if (times.size() < 2 || static_cast<std::size_t>(values.cols()) != times.size()) {
            throw Error(ErrorCode::DimensionMismatch, "control signal needs matching times and values");
        }
        for (std::size_t i = 1; i < times.size(); ++i) {
            if (!(times[i] > times[i - 1])) throw Error(ErrorCode::OutOfDomain, "control sample times must increase");
        }
    }

    VectorXd operator()(double t) const {
        if (t <= times.front()) return values.col(0);
        if (t >= times.back()) return mode == Mode::Hold ? values.col(values.cols() - 2) : values.col(values.cols() - 1);
        const auto it = std::lower_bound(times.begin(), times.end(), t);
        const std::size_t hi = static_cast<std::size_t>(it - times.begin());
        const std::size_t lo = hi - 1;
        if (mode == Mode::Hold) {
            // within a relative 1e-9 of a sample time, treat t as that sample time
            const double span = times[hi] - times[lo];
            if (t - times[lo] <= 1e-9 * span && lo > 0) return values.col(lo - 1);
            return values.col(lo);
        }
        const double f = (t - times[lo]) / (times[hi] - times[lo]);
        return (1.0 - f) * values.col(lo) + f * values.col(hi);
    }
};

struct ValidationOptions {
    /// Validation uses 4 * cells + 1 equispaced points.
    std::size_t cells = 256;
};

struct ValidationStats {
    double lambda_min = 0.0;
    double lambda_max = 0.0;
    std::vector<double> lipschitz;
    double coupling_norm_inf = 0.0;
    std::size_t points = 0;

    bool operator==(const ValidationStats&) const = default;
};

class SystemSpec;
SystemSpec validate_system(const SpeedProfile&, const CouplingField&, const ReflectionMatrix&, ValidationOptions = {});

/// Validated, immutable description of the controlled system.
class SystemSpec {
public:
    std::size_t k() const { return profile_.k; }
    std::size_t m() const { return profile_.m; }
    std::size_t n() const { return profile_.n(); }

    const SpeedProfile& profile() const { return profile_; }
    const CouplingField& coupling() const { return coupling_; }
    const ReflectionMatrix& reflection() const { return reflection_; }
    const MatrixXd& B() const { return reflection_.B; }
    const ValidationStats& stats() const { return stats_; }
    const ValidationOptions& validation_options() const { return options_; }

    double lambda_min() const { return stats_.lambda_min; }
    double lambda_max() const { return stats_.lambda_max; }
    bool state_dependent() const { return profile_.state_dependent(); }
    bool negative(std::size_t i) const { return i < k(); }

    /// Positive speed lambda_i.
    double lambda(std::size_t i, double x, std::span<const double> y = {}) const { return profile_.lambda[i](x, y); }
    /// Diagonal entry of Sigma: -lambda_i for i < k, +lambda_i otherwise.
    double sigma(std::size_t i, double x, std::span<const double> y = {}) const {
        const double l = lambda(i, x, y);
        return negative(i) ? -l : l;
    }
    MatrixXd C(double x) const { return coupling_(x); }

    bool coupling_is_zero() const { return stats_.coupling_norm_inf == 0.0; }

private:
    friend SystemSpec validate_system(const SpeedProfile&, const CouplingField&, const ReflectionMatrix&,
                                      ValidationOptions);
    SystemSpec(SpeedProfile p, CouplingField c, ReflectionMatrix r, ValidationStats s, ValidationOptions o)
        : profile_(std::move(p)), coupling_(std::move(c)), reflection_(std::move(r)), stats_(std::move(s)), options_(o) {}

    SpeedProfile profile_;
    CouplingField coupling_;
    ReflectionMatrix reflection_;
    ValidationStats stats_;
    ValidationOptions options_;
};

/// Checks dimensions, the strict speed ordering, finiteness and boundedness on
/// a 4*cells+1 point grid and records the resulting statistics.
/// State-dependent speeds are checked at the zero state.
inline SystemSpec validate_system(const SpeedProfile& profile, const CouplingField& coupling,
                                  const ReflectionMatrix& reflection, ValidationOptions options) {
    const std::size_t k = profile.k, m = profile.m, n = k + m;
    if (k < 1 || m < 1) throw Error(ErrorCode::DimensionMismatch, "need k >= 1 and m >= 1");
    if (profile.lambda.size() != n) {
        throw Error(ErrorCode::DimensionMismatch,
                    "expected " + std::to_string(n) + " speeds, got " + std::to_string(profile.lambda.size()));
    }
    if (coupling.n() != n) {
        throw Error(ErrorCode::DimensionMismatch, "coupling is " + std::to_string(coupling.n()) + "x" +
                                                      std::to_string(coupling.n()) + ", expected n = " +
                                                      std::to_string(n));
    }
    if (static_cast<std::size_t>(reflection.B.rows()) != k || static_cast<std::size_t>(reflection.B.cols()) != m) {
        throw Error(ErrorCode::DimensionMismatch, "boundary matrix must be k x m = " + std::to_string(k) + "x" +
                                                      std::to_string(m));
    }
    if (!reflection.B.allFinite()) throw Error(ErrorCode::NonFiniteEntry, "boundary matrix has non-finite entries");
    if (options.cells < 1) throw Error(ErrorCode::DimensionMismatch, "validation grid needs cells >= 1");

    const std::vector<double> zero_state(n, 0.0);
    const std::size_t points = 4 * options.cells + 1;
    ValidationStats stats;
    stats.points = points;
    stats.lambda_min = std::numeric_limits<double>::infinity();
    stats.lambda_max = 0.0;
    stats.lipschitz.assign(n, 0.0);
    std::vector<double> prev(n, 0.0);
    const double dx = 1.0 / static_cast<double>(points - 1);
    for (std::size_t p = 0; p < points; ++p) {
        const double x = static_cast<double>(p) * dx;
        std::vector<double> lam(n);
        for (std::size_t i = 0; i < n; ++i) {
            lam[i] = profile.lambda[i](x, zero_state);
            if (!std::isfinite(lam[i])) {
                throw Error(ErrorCode::NonFiniteEntry, "lambda" + std::to_string(i + 1) + " is not finite at x = " +
                                                           detail::fmt_num(x));
            }
            if (lam[i] <= 0.0) {
                throw Error(ErrorCode::OrderingViolated, "lambda" + std::to_string(i + 1) +
                                                             " is not positive at x = " + detail::fmt_num(x));
            }
            stats.lambda_min = std::min(stats.lambda_min, lam[i]);
            stats.lambda_max = std::max(stats.lambda_max, lam[i]);
            if (p > 0) stats.lipschitz[i] = std::max(stats.lipschitz[i], std::abs(lam[i] - prev[i]) / dx);
        }
        for (std::size_t i = 0; i + 1 < k; ++i) {
            if (!(lam[i] > lam[i + 1])) {
                throw Error(ErrorCode::OrderingViolated, "need lambda" + std::to_string(i + 1) + " > lambda" +
                                                             std::to_string(i + 2) + " at x = " + detail::fmt_num(x));
            }
        }
        for (std::size_t i = k; i + 1 < n; ++i) {
            if (!(lam[i] < lam[i + 1])) {
                throw Error(ErrorCode::OrderingViolated, "need lambda" + std::to_string(i + 1) + " < lambda" +
                                                             std::to_string(i + 2) + " at x = " + detail::fmt_num(x));
            }
        }
        const MatrixXd c = coupling(x);
        if (!c.allFinite()) throw Error(ErrorCode::NonFiniteEntry, "coupling is not finite at x = " + detail::fmt_num(x));
        if (c.size() > 0) stats.coupling_norm_inf = std::max(stats.coupling_norm_inf, c.cwiseAbs().maxCoeff());
        prev = std::move(lam);
    }

    if (reflection.nonlinear) {
        const VectorXd at0 = reflection.nonlinear(VectorXd::Zero(m));
        if (at0.size() != static_cast<Eigen::Index>(k) || at0.cwiseAbs().maxCoeff() > 1e-12) {
            throw Error(ErrorCode::InconsistentBoundaryMap, "nonlinear boundary map must vanish at 0");
        }
        const double eps = 1e-6;
        MatrixXd jac(k, m);
        for (std::size_t j = 0; j < m; ++j) {
            VectorXd e = VectorXd::Zero(m);
            e[j] = eps;
            jac.col(j) = (reflection.nonlinear(e) - reflection.nonlinear(-e)) / (2 * eps);
        }
        const double scale = std::max(1.0, reflection.B.cwiseAbs().maxCoeff());
        if ((jac - reflection.B).cwiseAbs().maxCoeff() > 1e-5 * scale) {
            throw Error(ErrorCode::InconsistentBoundaryMap, "Jacobian of the nonlinear boundary map at 0 differs from B");
        }
    }

    return SystemSpec(profile, coupling, reflection, std::move(stats), options);
}

inline SystemSpec validate_system(const SystemSpec& spec) {
    return validate_system(spec.profile(), spec.coupling(), spec.reflection(), spec.validation_options());
}

/// Signed speeds (-lambda_1..-lambda_k, lambda_{k+1}..lambda_n) at x (and y
/// for state-dependent profiles).
inline VectorXd eval_speeds(const SystemSpec& spec, double x, std::optional<std::span<const double>> y = std::nullopt) {
    if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::OutOfDomain, "x = " + detail::fmt_num(x) + " outside [0,1]");
    std::span<const double> state{};
    if (spec.state_dependent()) {
        if (!y || y->size() != spec.n()) {
            throw Error(ErrorCode::DimensionMismatch, "state-dependent speeds need a state vector of size n");
        }
        state = *y;
    }
    VectorXd out(spec.n());
    for (std::size_t i = 0; i < spec.n(); ++i) out[i] = spec.sigma(i, x, state);
    return out;
}

}  // namespace hypctrl
