#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hypctrl/core.hpp"
#include "hypctrl/simulator.hpp"

namespace hypctrl {

/// Matrix kernel K(x, y) sampled on the triangular grid
/// {(x_p, y_q) : 0 <= q <= p <= N_K}, x_p = p / N_K.
class Kernel {
public:
    Kernel() = default;
    Kernel(std::size_t n, std::size_t NK)
        : n_(n), NK_(NK), data_(n * n, std::vector<double>(nodes(NK), 0.0)) {}

    static std::size_t nodes(std::size_t NK) { return (NK + 1) * (NK + 2) / 2; }
    static std::size_t index(std::size_t p, std::size_t q) { return p * (p + 1) / 2 + q; }

    std::size_t n() const { return n_; }
    std::size_t NK() const { return NK_; }
    double h() const { return 1.0 / static_cast<double>(NK_); }
    double x(std::size_t p) const { return static_cast<double>(p) * h(); }

    double& at(std::size_t i, std::size_t j, std::size_t p, std::size_t q) { return data_[i * n_ + j][index(p, q)]; }
    double at(std::size_t i, std::size_t j, std::size_t p, std::size_t q) const { return data_[i * n_ + j][index(p, q)]; }
    const std::vector<double>& entry(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
    std::vector<double>& entry(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

    MatrixXd node(std::size_t p, std::size_t q) const {
        MatrixXd out(n_, n_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) out(i, j) = at(i, j, p, q);
        return out;
    }

    /// Up to three (node index, weight) pairs: bilinear in square cells,
    /// barycentric in the half cells along the diagonal. y is clipped to x.
    struct Stencil {
        std::size_t idx[4];
        double w[4];
        int count;
    };

    Stencil stencil(double x, double y) const {
        const double N = static_cast<double>(NK_);
        x = std::clamp(x, 0.0, 1.0);
        y = std::clamp(y, 0.0, x);
        const std::size_t a = std::min(static_cast<std::size_t>(x * N), NK_ - 1);
        std::size_t b = std::min(static_cast<std::size_t>(y * N), a);
        const double fx = std::clamp(x * N - static_cast<double>(a), 0.0, 1.0);
        double fy = std::clamp(y * N - static_cast<double>(b), 0.0, 1.0);
        Stencil s{};
        if (b < a) {
            s.count = 4;
            s.idx[0] = index(a, b), s.w[0] = (1 - fx) * (1 - fy);
            s.idx[1] = index(a + 1, b), s.w[1] = fx * (1 - fy);
            s.idx[2] = index(a, b + 1), s.w[2] = (1 - fx) * fy;
            s.idx[3] = index(a + 1, b + 1), s.w[3] = fx * fy;
        } else {
            fy = std::min(fy, fx);
            s.count = 3;
            s.idx[0] = index(a, a), s.w[0] = 1 - fx;
            s.idx[1] = index(a + 1, a), s.w[1] = fx - fy;
            s.idx[2] = index(a + 1, a + 1), s.w[2] = fy;
        }
        return s;
    }

    static double apply(const Stencil& s, const std::vector<double>& v) {
        double acc = 0.0;
        for (int c = 0; c < s.count; ++c) acc += s.w[c] * v[s.idx[c]];
        return acc;
    }

    double operator()(std::size_t i, std::size_t j, double x, double y) const { return apply(stencil(x, y), entry(i, j)); }

    MatrixXd operator()(double x, double y) const {
        const auto s = stencil(x, y);
        MatrixXd out(n_, n_);
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) out(i, j) = apply(s, entry(i, j));
        return out;
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& e : data_)
            for (double v : e) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        for (const auto& e : data_)
            for (double v : e)
                if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t n_ = 0;
    std::size_t NK_ = 0;
    std::vector<std::vector<double>> data_;
};

struct KernelOptions {
    std::size_t NK = 64;
    std::size_t max_iters = 200;
    double fp_tolerance = 1e-10;
};

struct KernelDiagnostics {
    std::size_t iterations = 0;
    std::vector<double> sup_changes;
    /// L-infinity norm of the finite-difference PDE residual, one-cell diagonal band excluded.
    double pde_residual = 0.0;
    /// max over i != j and samples of |K_ij(x,x)(Sigma_jj - Sigma_ii) - C_ij|.
    double diagonal_defect = 0.0;
};

struct KernelSolution {
    Kernel K;
    KernelDiagnostics diagnostics;
};

namespace detail {

/// theta(x) = integral_0^x 1/lambda on a fine uniform grid, with a uniform
/// inverse table.
class TravelCoordinate {
public:
    TravelCoordinate() = default;
    TravelCoordinate(const std::function<double(double)>& lambda, std::size_t cells) : cells_(cells) {
        fwd_.assign(cells + 1, 0.0);
        const double dx = 1.0 / static_cast<double>(cells);
        double prev = 1.0 / lambda(0.0);
        for (std::size_t g = 1; g <= cells; ++g) {
            const double xm = (static_cast<double>(g) - 0.5) * dx, xr = static_cast<double>(g) * dx;
            const double mid = 1.0 / lambda(xm), right = 1.0 / lambda(xr);
            fwd_[g] = fwd_[g - 1] + dx / 6.0 * (prev + 4.0 * mid + right);
            prev = right;
        }
        total_ = fwd_.back();
        inv_.assign(cells + 1, 0.0);
        std::size_t g = 0;
        for (std::size_t u = 0; u <= cells; ++u) {
            const double v = total_ * static_cast<double>(u) / static_cast<double>(cells);
            while (g + 1 < cells && fwd_[g + 1] < v) ++g;
            const double span = fwd_[g + 1] - fwd_[g];
            const double f = span > 0.0 ? std::clamp((v - fwd_[g]) / span, 0.0, 1.0) : 0.0;
            inv_[u] = (static_cast<double>(g) + f) * dx;
        }
        inv_.front() = 0.0;
        inv_.back() = 1.0;
    }

    double total() const { return total_; }
    double operator()(double x) const { return interp_uniform(fwd_, x); }
    double inverse(double v) const { return interp_uniform(inv_, total_ > 0.0 ? v / total_ : 0.0); }

private:
    std::size_t cells_ = 0;
    double total_ = 0.0;
    std::vector<double> fwd_;
    std::vector<double> inv_;
};

enum class DataEnd : std::uint8_t { Diagonal, Bottom, Right, Node };

struct PathInfo {
    DataEnd end = DataEnd::Right;
    double dir = 1.0;
    double r = 0.0;   // parameter length to the data end
    double xe = 0.0;  // data-end coordinates
    double ye = 0.0;
};

}  // namespace detail

/// Exponential gauge w~_i = exp(g_i(x)) w_i with g_i = integral_0^x C_ii / Sigma_ii,
/// which removes the diagonal of C.
class DiagonalGauge {
public:
    DiagonalGauge() = default;
    DiagonalGauge(std::vector<std::vector<double>> g) : g_(std::move(g)) {}

    bool identity() const { return g_.empty(); }
    double exponent(std::size_t i, double x) const { return identity() ? 0.0 : detail::interp_uniform(g_[i], x); }

    StateField apply(const StateField& w) const { return scaled(w, 1.0); }
    StateField unapply(const StateField& w) const { return scaled(w, -1.0); }

private:
    StateField scaled(const StateField& w, double sign) const {
        if (identity()) return w;
        if (w.n() != g_.size()) throw Error(ErrorCode::GridMismatch, "gauge and state sizes differ");
        StateField out = w;
        for (std::size_t i = 0; i < w.n(); ++i)
            for (std::size_t q = 0; q <= w.N(); ++q)
                out.values(i, q) *= std::exp(sign * exponent(i, static_cast<double>(q) / static_cast<double>(w.N())));
        return out;
    }

    std::vector<std::vector<double>> g_;
};

struct GaugedSystem {
    SystemSpec spec;
    DiagonalGauge gauge;
};

inline bool coupling_diagonal_free(const SystemSpec& spec, std::size_t points = 257) {
    for (std::size_t p = 0; p < points; ++p) {
        const MatrixXd c = spec.C(static_cast<double>(p) / static_cast<double>(points - 1));
        if (c.diagonal().cwiseAbs().maxCoeff() != 0.0) return false;
    }
    return true;
}

/// Removes diag C by the exponential gauge; C~_il = C_il exp(g_i - g_l).
inline GaugedSystem preprocess_diagonal(const SystemSpec& spec, std::size_t cells = 4096) {
    if (spec.state_dependent()) throw Error(ErrorCode::NotApplicable, "gauge needs state-independent speeds");
    if (coupling_diagonal_free(spec)) return {spec, DiagonalGauge{}};
    const std::size_t n = spec.n();
    const double dx = 1.0 / static_cast<double>(cells);
    std::vector<std::vector<double>> g(n, std::vector<double>(cells + 1, 0.0));
    auto integrand = [&](std::size_t i, double x) { return spec.C(x)(i, i) / spec.sigma(i, x); };
    for (std::size_t i = 0; i < n; ++i) {
        double prev = integrand(i, 0.0);
        for (std::size_t c = 1; c <= cells; ++c) {
            const double xl = static_cast<double>(c - 1) * dx;
            const double mid = integrand(i, xl + 0.5 * dx), right = integrand(i, xl + dx);
            g[i][c] = g[i][c - 1] + dx / 6.0 * (prev + 4.0 * mid + right);
            prev = right;
        }
    }
    DiagonalGauge gauge(g);
    const CouplingField original = spec.coupling();
    auto field = CouplingField::callable(n, [original, gauge, n](double x) {
        MatrixXd c = original(x);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t l = 0; l < n; ++l) {
                c(i, l) = i == l ? 0.0 : c(i, l) * std::exp(gauge.exponent(i, x) - gauge.exponent(l, x));
            }
        }
        return c;
    });
    return {validate_system(spec.profile(), field, spec.reflection(), spec.validation_options()), gauge};
}

/// Entries (k+p, k+q), q <= p, whose y = 0 data is fitted to zero S_{++}.
inline bool fitted_entry(std::size_t i, std::size_t j, std::size_t k) { return i >= k && j >= k && j <= i; }

/// Solves the kernel equations
///   Sigma(x) K_x + K_y Sigma(y) + K Sigma'(y) - K C(y) = 0 on 0 < y < x < 1,
///   K(x,x) Sigma(x) - Sigma(x) K(x,x) = C(x),
/// entrywise along characteristics by Jacobi successive approximation.
/// Entries whose characteristic reaches the diagonal take the diagonal data;
/// the entries (k+p, k+q), q <= p, take y = 0 data chosen so that
/// S_{++}(x) is zero on and below its diagonal; all others take zero data at x = 1.
inline KernelSolution solve_kernel(const SystemSpec& spec, const KernelOptions& options = {}) {
    if (spec.state_dependent()) throw Error(ErrorCode::NotApplicable, "kernels need state-independent speeds");
    if (options.NK < 4) throw Error(ErrorCode::DimensionMismatch, "kernel resolution N_K must be >= 4");
    if (!coupling_diagonal_free(spec)) {
        throw Error(ErrorCode::DiagonalCouplingPresent, "coupling has a nonzero diagonal; apply preprocess_diagonal first");
    }
    const std::size_t n = spec.n(), k = spec.k(), NK = options.NK;
    const double h = 1.0 / static_cast<double>(NK);
    const std::size_t fine = 16 * NK;
    const std::vector<double> zero(n, 0.0);

    std::vector<detail::TravelCoordinate> theta;
    std::vector<std::vector<double>> sigma_tab(n, std::vector<double>(fine + 1));
    for (std::size_t c = 0; c < n; ++c) {
        theta.emplace_back([&](double x) { return spec.lambda(c, x, zero); }, fine);
        for (std::size_t g = 0; g <= fine; ++g) sigma_tab[c][g] = spec.sigma(c, static_cast<double>(g) / static_cast<double>(fine), zero);
    }
    const bool const_c = spec.coupling().is_constant();
    const MatrixXd c_const = spec.C(0.0);
    std::vector<MatrixXd> c_tab;
    if (!const_c) {
        for (std::size_t g = 0; g <= fine; ++g) c_tab.push_back(spec.C(static_cast<double>(g) / static_cast<double>(fine)));
    }
    auto coupling_at = [&](double y) -> MatrixXd {
        if (const_c) return c_const;
        const double s = std::clamp(y, 0.0, 1.0) * static_cast<double>(fine);
        const std::size_t g = std::min(static_cast<std::size_t>(s), fine - 1);
        const double f = s - static_cast<double>(g);
        return (1 - f) * c_tab[g] + f * c_tab[g + 1];
    };
    auto sigma = [&](std::size_t c, double x) { return detail::interp_uniform(sigma_tab[c], x); };
    const double lam_max = spec.lambda_max();
    const bool coupled = !spec.coupling_is_zero();

    // Path geometry depends only on (i, j) and the node.
    const std::size_t nodes = Kernel::nodes(NK);
    std::vector<std::vector<detail::PathInfo>> paths(n * n, std::vector<detail::PathInfo>(nodes));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double si = spec.negative(i) ? -1.0 : 1.0, sj = spec.negative(j) ? -1.0 : 1.0;
            const bool fitted = fitted_entry(i, j, k);
            for (std::size_t p = 0; p <= NK; ++p) {
                for (std::size_t q = 0; q <= p; ++q) {
                    auto& info = paths[i * n + j][Kernel::index(p, q)];
                    const double x0 = static_cast<double>(p) * h, y0 = static_cast<double>(q) * h;
                    if (i != j && p == q) {
                        info = {detail::DataEnd::Node, 1.0, 0.0, x0, y0};
                        continue;
                    }
                    const double ti = theta[i](x0), tj = theta[j](y0);
                    detail::PathInfo ends[2];
                    for (int d = 0; d < 2; ++d) {
                        const double dir = d == 0 ? 1.0 : -1.0;
                        const double vi = si * dir, vj = sj * dir;
                        // parameter r at which x hits 0 or 1, y hits 0 or 1
                        const double rx = vi > 0 ? (theta[i].total() - ti) / vi : ti / -vi;
                        const double ry = vj > 0 ? (theta[j].total() - tj) / vj : tj / -vj;
                        double r_end = std::min(rx, ry);
                        detail::DataEnd kind = rx <= ry ? (vi > 0 ? detail::DataEnd::Right : detail::DataEnd::Bottom)
                                                        : (vj < 0 ? detail::DataEnd::Bottom : detail::DataEnd::Right);
                        auto at = [&](double r) {
                            return std::pair{theta[i].inverse(ti + vi * r), theta[j].inverse(tj + vj * r)};
                        };
                        if (i != j && r_end > 0.0) {
                            const double step = 0.5 * h / lam_max;
                            double lo = 0.0;
                            bool crossed = false;
                            for (double r = step;; r += step) {
                                const double rr = std::min(r, r_end);
                                const auto [xx, yy] = at(rr);
                                if (xx - yy < 0.0) {
                                    double a = lo, b = rr;
                                    for (int it = 0; it < 60; ++it) {
                                        const double mid = 0.5 * (a + b);
                                        const auto [xm, ym] = at(mid);
                                        (xm - ym < 0.0 ? b : a) = mid;
                                    }
                                    r_end = 0.5 * (a + b);
                                    crossed = true;
                                    break;
                                }
                                lo = rr;
                                if (rr >= r_end) break;
                            }
                            if (crossed) kind = detail::DataEnd::Diagonal;
                        }
                        const auto [xe, ye] = at(r_end);
                        ends[d] = {kind, dir, r_end, xe, kind == detail::DataEnd::Diagonal ? xe : ye};
                        if (kind == detail::DataEnd::Bottom) ends[d].ye = 0.0;
                    }
                    auto pick = [&](detail::DataEnd want) -> const detail::PathInfo* {
                        for (const auto& e : ends)
                            if (e.end == want) return &e;
                        return nullptr;
                    };
                    const detail::PathInfo* chosen = nullptr;
                    if (i != j) chosen = pick(detail::DataEnd::Diagonal);
                    if (!chosen && fitted) chosen = pick(detail::DataEnd::Bottom);
                    if (!chosen) chosen = pick(detail::DataEnd::Right);
                    if (!chosen) chosen = &ends[0];
                    info = *chosen;
                    if (info.end == detail::DataEnd::Bottom && !fitted) {
                        // both ends on y = 0 cannot happen; treat as zero data
                        info.end = detail::DataEnd::Right;
                    }
                }
            }
        }
    }

    const double lam0_plus_min = [&] {
        double v = std::numeric_limits<double>::infinity();
        for (std::size_t j = k; j < n; ++j) v = std::min(v, spec.lambda(j, 0.0, zero));
        return v;
    }();
    if (!(lam0_plus_min > 0.0)) throw Error(ErrorCode::SingularBoundarySpeed, "positive speed vanishes at x = 0");

    Kernel K(n, NK), next(n, NK);
    KernelDiagnostics diag;
    const MatrixXd& B = spec.B();
    std::size_t rising = 0;
    bool converged = false;
    for (std::size_t iter = 1; iter <= options.max_iters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                auto& out = next.entry(i, j);
                for (std::size_t p = 0; p <= NK; ++p) {
                    for (std::size_t q = 0; q <= p; ++q) {
                        const auto& info = paths[i * n + j][Kernel::index(p, q)];
                        const double y0 = static_cast<double>(q) * h;
                        if (info.end == detail::DataEnd::Node) {
                            const double x0 = static_cast<double>(p) * h;
                            out[Kernel::index(p, q)] = coupling_at(x0)(i, j) / (sigma(j, x0) - sigma(i, x0));
                            continue;
                        }
                        double gd = 0.0;
                        if (info.end == detail::DataEnd::Diagonal) {
                            gd = coupling_at(info.xe)(i, j) / (sigma(j, info.xe) - sigma(i, info.xe)) * sigma(j, info.xe);
                        } else if (info.end == detail::DataEnd::Bottom) {
                            const auto st = K.stencil(info.xe, 0.0);
                            double acc = 0.0;
                            for (std::size_t l = 0; l < k; ++l) {
                                acc += Kernel::apply(st, K.entry(i, l)) * spec.lambda(l, 0.0, zero) * B(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j - k));
                            }
                            gd = acc;  // = K_ij(xe,0) * lambda_j(0) = K_ij * Sigma_jj(0)
                        }
                        double integral = 0.0;
                        if (coupled && info.r > 0.0) {
                            const double si = spec.negative(i) ? -1.0 : 1.0, sj = spec.negative(j) ? -1.0 : 1.0;
                            const double ti = theta[i](static_cast<double>(p) * h), tj = theta[j](y0);
                            const std::size_t steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(info.r * lam_max / h)));
                            const double dr = info.r / static_cast<double>(steps);
                            for (std::size_t s = 0; s <= steps; ++s) {
                                const double r = static_cast<double>(s) * dr;
                                const double xx = theta[i].inverse(ti + si * info.dir * r);
                                const double yy = theta[j].inverse(tj + sj * info.dir * r);
                                const auto st = K.stencil(xx, yy);
                                const MatrixXd c = coupling_at(yy);
                                double f = 0.0;
                                for (std::size_t l = 0; l < n; ++l) {
                                    const double clj = c(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j));
                                    if (clj != 0.0) f += Kernel::apply(st, K.entry(i, l)) * clj;
                                }
                                f *= sigma(j, yy);
                                integral += (s == 0 || s == steps ? 0.5 : 1.0) * dr * f;
                            }
                        }
                        const double g = gd - info.dir * integral;
                        out[Kernel::index(p, q)] = g / sigma(j, y0);
                    }
                }
            }
        }
        double change = 0.0;
        for (std::size_t e = 0; e < n * n; ++e) {
            const auto& a = next.entry(e / n, e % n);
            const auto& b = K.entry(e / n, e % n);
            for (std::size_t idx = 0; idx < a.size(); ++idx) change = std::max(change, std::abs(a[idx] - b[idx]));
        }
        std::swap(K, next);
        diag.iterations = iter;
        if (!std::isfinite(change)) throw Error(ErrorCode::FixedPointDivergence, "kernel iteration produced non-finite values");
        if (!diag.sup_changes.empty() && change > diag.sup_changes.back()) {
            if (++rising >= 5) {
                throw Error(ErrorCode::FixedPointDivergence,
                            "kernel sup-change grew for 5 consecutive iterations (last " + detail::fmt_num(change) + ")");
            }
        } else {
            rising = 0;
        }
        diag.sup_changes.push_back(change);
        if (change < options.fp_tolerance) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw Error(ErrorCode::MaxItersExceeded, "kernel iteration did not reach tolerance in " +
                                                     std::to_string(options.max_iters) + " iterations");
    }

    // Residual of the PDE for G_ij = K_ij Sigma_jj(y):
    //   Sigma_ii(x) G_x + Sigma_jj(y) G_y - Sigma_jj(y) (K C)_ij(y) = 0.
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            auto G = [&](std::size_t p, std::size_t q) { return K.at(i, j, p, q) * sigma(j, static_cast<double>(q) * h); };
            for (std::size_t p = 2; p <= NK; ++p) {
                const double x = static_cast<double>(p) * h;
                for (std::size_t q = 0; q + 2 <= p; ++q) {
                    const double y = static_cast<double>(q) * h;
                    const double gx = (G(p, q) - G(p - 1, q)) / h;
                    const double gy = (G(p, q + 1) - G(p, q)) / h;
                    double kc = 0.0;
                    if (coupled) {
                        const MatrixXd c = coupling_at(y);
                        for (std::size_t l = 0; l < n; ++l) kc += K.at(i, l, p, q) * c(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j));
                    }
                    const double r = sigma(i, x) * gx + sigma(j, y) * gy - sigma(j, y) * kc;
                    residual = std::max(residual, std::abs(r));
                }
            }
        }
    }
    diag.pde_residual = residual;
    for (std::size_t p = 0; p <= NK; ++p) {
        const double x = static_cast<double>(p) * h;
        const MatrixXd c = spec.C(x);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (i != j) {
                    const double d = K.at(i, j, p, p) * (spec.sigma(j, x, zero) - spec.sigma(i, x, zero)) - c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    diag.diagonal_defect = std::max(diag.diagonal_defect, std::abs(d));
                }
    }
    return {std::move(K), std::move(diag)};
}

struct SourceMatrixReport {
    SourceMatrix S;
    /// max |(S_{++})_{pq}| over q <= p and all samples.
    double lower_triangle_max = 0.0;
    /// max |S| over the first k columns (zero by construction).
    double leading_columns_max = 0.0;
};

/// Q = [[0_k, B], [0_{m,k}, I_m]].
inline MatrixXd q_matrix(const MatrixXd& B) {
    const auto k = B.rows(), m = B.cols();
    MatrixXd Q = MatrixXd::Zero(k + m, k + m);
    Q.topRightCorner(k, m) = B;
    Q.bottomRightCorner(m, m).setIdentity();
    return Q;
}

/// S(x) = K(x, 0) Sigma(0) Q at the kernel's sample points.
inline SourceMatrixReport source_matrix(const Kernel& K, const SystemSpec& spec, const MatrixXd& B) {
    const std::size_t n = spec.n(), k = spec.k(), m = spec.m();
    if (K.n() != n) throw Error(ErrorCode::GridMismatch, "kernel size does not match the system");
    const std::vector<double> zero(n, 0.0);
    VectorXd sigma0(n);
    for (std::size_t i = 0; i < n; ++i) sigma0[static_cast<Eigen::Index>(i)] = spec.sigma(i, 0.0, zero);
    const MatrixXd right = sigma0.asDiagonal() * q_matrix(B);
    SourceMatrixReport out;
    for (std::size_t p = 0; p <= K.NK(); ++p) {
        MatrixXd s = K.node(p, 0) * right;
        out.S.samples.push_back(s);
        out.leading_columns_max = std::max(out.leading_columns_max, s.leftCols(static_cast<Eigen::Index>(k)).cwiseAbs().maxCoeff());
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = 0; b <= a; ++b)
                out.lower_triangle_max = std::max(out.lower_triangle_max, std::abs(s(static_cast<Eigen::Index>(k + a), static_cast<Eigen::Index>(k + b))));
    }
    return out;
}

namespace detail {

/// K(x_p, y_q) for q <= p on a state grid with N cells.
inline std::vector<MatrixXd> kernel_on_grid(const Kernel& K, std::size_t N) {
    std::vector<MatrixXd> out(Kernel::nodes(N));
    const double h = 1.0 / static_cast<double>(N);
    for (std::size_t p = 0; p <= N; ++p)
        for (std::size_t q = 0; q <= p; ++q) out[Kernel::index(p, q)] = K(static_cast<double>(p) * h, static_cast<double>(q) * h);
    return out;
}

}  // namespace detail

/// u(x_p) = w(x_p) - sum_{q <= p} omega_q K(x_p, y_q) w(y_q), trapezoid weights.
inline StateField transform(const StateField& w, const Kernel& K) {
    if (w.n() != K.n()) throw Error(ErrorCode::GridMismatch, "state and kernel sizes differ");
    const std::size_t N = w.N();
    const double h = w.h();
    const auto Kg = detail::kernel_on_grid(K, N);
    StateField u = w;
    for (std::size_t p = 1; p <= N; ++p) {
        VectorXd acc = VectorXd::Zero(static_cast<Eigen::Index>(w.n()));
        for (std::size_t q = 0; q <= p; ++q) {
            const double omega = (q == 0 || q == p) ? 0.5 * h : h;
            acc += omega * (Kg[Kernel::index(p, q)] * w.values.col(static_cast<Eigen::Index>(q)));
        }
        u.values.col(static_cast<Eigen::Index>(p)) -= acc;
    }
    return u;
}

/// Inverse of `transform` on the same grid by forward substitution:
/// (I - h/2 K(x_p, x_p)) w_p = u_p + sum_{q < p} omega_q K(x_p, y_q) w_q.
inline StateField inverse_transform(const StateField& u, const Kernel& K) {
    if (u.n() != K.n()) throw Error(ErrorCode::GridMismatch, "state and kernel sizes differ");
    const std::size_t N = u.N(), n = u.n();
    const double h = u.h();
    const auto Kg = detail::kernel_on_grid(K, N);
    StateField w = u;
    const MatrixXd I = MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t p = 1; p <= N; ++p) {
        VectorXd rhs = u.values.col(static_cast<Eigen::Index>(p));
        for (std::size_t q = 0; q < p; ++q) {
            const double omega = q == 0 ? 0.5 * h : h;
            rhs += omega * (Kg[Kernel::index(p, q)] * w.values.col(static_cast<Eigen::Index>(q)));
        }
        const MatrixXd lhs = I - 0.5 * h * Kg[Kernel::index(p, p)];
        w.values.col(static_cast<Eigen::Index>(p)) = lhs.partialPivLu().solve(rhs);
    }
    return w;
}

/// Root mean square over consecutive snapshot pairs of the L2 norm of
///   (u^{s+1} - u^s)/dt - Sigma(x) D_x u^s - S(x) u^s(0)
/// at interior nodes (central D_x).
inline double target_residual(const std::vector<StateField>& snapshots, const SourceMatrix& S, const SystemSpec& spec) {
    if (snapshots.size() < 2) return 0.0;
    const std::size_t n = spec.n(), N = snapshots.front().N();
    const double h = 1.0 / static_cast<double>(N);
    const std::vector<double> zero(n, 0.0);
    MatrixXd sig(n, N + 1);
    std::vector<MatrixXd> s_nodes;
    for (std::size_t q = 0; q <= N; ++q) {
        for (std::size_t i = 0; i < n; ++i) sig(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(q)) = spec.sigma(i, static_cast<double>(q) * h, zero);
        s_nodes.push_back(S(static_cast<double>(q) * h));
    }
    double acc = 0.0;
    for (std::size_t s = 0; s + 1 < snapshots.size(); ++s) {
        const auto& a = snapshots[s].values;
        const auto& b = snapshots[s + 1].values;
        const double dt = snapshots[s + 1].t - snapshots[s].t;
        if (static_cast<std::size_t>(a.cols()) != N + 1 || static_cast<std::size_t>(a.rows()) != n) {
            throw Error(ErrorCode::GridMismatch, "snapshot shapes differ");
        }
        double l2 = 0.0;
        for (std::size_t q = 1; q < N; ++q) {
            const auto qq = static_cast<Eigen::Index>(q);
            const VectorXd r = (b.col(qq) - a.col(qq)) / dt -
                               sig.col(qq).cwiseProduct((a.col(qq + 1) - a.col(qq - 1)) / (2 * h)) - s_nodes[q] * a.col(0);
            l2 += h * r.squaredNorm();
        }
        acc += l2;
    }
    return std::sqrt(acc / static_cast<double>(snapshots.size() - 1));
}

inline double target_residual(const Trajectory& traj, const SourceMatrix& S, const SystemSpec& spec) {
    return target_residual(traj.snapshots, S, spec);
}

/// Kernel entries as CSV rows (x, y, i, j, K_ij), one-based i, j.
template <class Out>
void write_kernel_csv(Out& os, const Kernel& K) {
    os << "x,y,i,j,K\n";
    char buf[160];
    for (std::size_t p = 0; p <= K.NK(); ++p)
        for (std::size_t q = 0; q <= p; ++q)
            for (std::size_t i = 0; i < K.n(); ++i)
                for (std::size_t j = 0; j < K.n(); ++j) {
                    std::snprintf(buf, sizeof buf, "%.12g,%.12g,%zu,%zu,%.12g\n", K.x(p), K.x(q), i + 1, j + 1, K.at(i, j, p, q));
                    os << buf;
                }
}

template <class Out>
void write_source_csv(Out& os, const SourceMatrix& S) {
    os << "x,i,j,S\n";
    char buf[128];
    for (std::size_t p = 0; p < S.samples.size(); ++p)
        for (Eigen::Index i = 0; i < S.samples[p].rows(); ++i)
            for (Eigen::Index j = 0; j < S.samples[p].cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%.12g,%ld,%ld,%.12g\n", S.x(p), static_cast<long>(i + 1), static_cast<long>(j + 1), S.samples[p](i, j));
                os << buf;
            }
}

}  // namespace hypctrl
