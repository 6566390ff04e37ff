#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hypctrl/core.hpp"

namespace hypctrl {

/// Relative threshold on |det| of a trailing minor, scaled by (max |B_ij|)^i.
inline constexpr double kSingularTolerance = 1e-12;

struct MinorCheck {
    bool invertible = false;
    double determinant = 0.0;
    /// sigma_min / sigma_max of the minor.
    double rcond = 0.0;
};

/// The i x i submatrix from the last i rows and last i columns of B.
inline MatrixXd trailing_minor(const MatrixXd& B, std::size_t i) {
    return B.bottomRightCorner(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
}

inline MinorCheck trailing_minor_invertible(const MatrixXd& B, std::size_t i) {
    const std::size_t k = static_cast<std::size_t>(B.rows()), m = static_cast<std::size_t>(B.cols());
    if (i < 1 || i > std::min(k, m)) {
        throw Error(ErrorCode::IndexOutOfRange,
                    "minor order " + std::to_string(i) + " outside 1.." + std::to_string(std::min(k, m)));
    }
    const MatrixXd minor = trailing_minor(B, i);
    MinorCheck out;
    out.determinant = minor.determinant();
    const Eigen::JacobiSVD<MatrixXd> svd(minor);
    const auto& sv = svd.singularValues();
    out.rcond = sv(0) > 0.0 ? sv(sv.size() - 1) / sv(0) : 0.0;
    const double scale = B.size() ? B.cwiseAbs().maxCoeff() : 0.0;
    out.invertible = std::abs(out.determinant) > kSingularTolerance * std::pow(scale, static_cast<double>(i));
    return out;
}

/// B in class B: trailing minors of order 1..min{k, m-1} invertible.
inline bool in_class_B(const MatrixXd& B) {
    const std::size_t upto = std::min<std::size_t>(static_cast<std::size_t>(B.rows()), static_cast<std::size_t>(B.cols()) - 1);
    for (std::size_t i = 1; i <= upto; ++i) {
        if (!trailing_minor_invertible(B, i).invertible) return false;
    }
    return true;
}

/// B in class B_e: trailing minors of order 1..k invertible (needs m >= k).
inline bool in_class_Be(const MatrixXd& B) {
    const std::size_t k = static_cast<std::size_t>(B.rows()), m = static_cast<std::size_t>(B.cols());
    if (m < k) return false;
    for (std::size_t i = 1; i <= k; ++i) {
        if (!trailing_minor_invertible(B, i).invertible) return false;
    }
    return true;
}

struct ClassReport {
    bool in_B = false;
    bool in_Be = false;
    std::vector<MinorCheck> minors;  // orders 1..min{k,m}
    std::string diagnostic;
};

inline ClassReport classify(const MatrixXd& B) {
    ClassReport r;
    const std::size_t k = static_cast<std::size_t>(B.rows()), m = static_cast<std::size_t>(B.cols());
    for (std::size_t i = 1; i <= std::min(k, m); ++i) r.minors.push_back(trailing_minor_invertible(B, i));
    r.in_B = in_class_B(B);
    r.in_Be = in_class_Be(B);
    if (m < k) {
        r.diagnostic = "m < k: trailing minors of order > m do not exist, so B is not in B_e";
    } else {
        for (std::size_t i = 0; i < r.minors.size(); ++i) {
            if (!r.minors[i].invertible) {
                r.diagnostic = "trailing minor of order " + std::to_string(i + 1) + " is singular";
                break;
            }
        }
    }
    return r;
}

/// Boundary maps obtained by Gaussian elimination on w_-(t,0) = B w_+(t,0).
///
/// Level j (one-based) imposes w_{k+1-j}(0) = ... = w_k(0) = 0 and expresses
/// the last j rows as w_{k+m+1-j}(0) = M_j(w_{k+1}(0), ..., w_{k+m-j}(0)).
/// For linear B each M_j is the row vector `coefficients[j-1]` of length m-j.
class EliminationMaps {
public:
    using UserMap = std::function<double(const VectorXd&)>;

    std::size_t levels() const { return coefficients_.size(); }
    /// Levels used by the feedback law: min{k, m-1}.
    std::size_t feedback_levels() const { return feedback_levels_; }
    std::size_t k() const { return k_; }
    std::size_t m() const { return m_; }

    /// Zero-based state index of the boundary value produced by level j.
    std::size_t output_component(std::size_t j) const { return k_ + m_ - j; }
    /// Number of arguments w_{k+1}..w_{k+m-j} taken by level j.
    std::size_t arity(std::size_t j) const { return m_ - j; }

    const Eigen::RowVectorXd& coefficients(std::size_t j) const { return coefficients_.at(j - 1); }
    bool has_user_maps() const { return !user_.empty(); }

    double operator()(std::size_t j, const VectorXd& args) const {
        if (args.size() != static_cast<Eigen::Index>(arity(j))) {
            throw Error(ErrorCode::DimensionMismatch, "map level " + std::to_string(j) + " takes " +
                                                          std::to_string(arity(j)) + " arguments");
        }
        if (!user_.empty()) return user_.at(j - 1)(args);
        if (args.size() == 0) return 0.0;
        return coefficients(j).dot(args);
    }

    /// Full trailing trace (w_{k+m+1-j}(0), ..., w_{k+m}(0)) from the free
    /// values by chaining levels j, j-1, ..., 1.
    VectorXd complete_trace(std::size_t j, const VectorXd& free_values) const {
        VectorXd w_plus(m_);
        w_plus.head(static_cast<Eigen::Index>(m_ - j)) = free_values;
        for (std::size_t level = j; level >= 1; --level) {
            const std::size_t a = arity(level);
            w_plus[static_cast<Eigen::Index>(a)] = (*this)(level, w_plus.head(static_cast<Eigen::Index>(a)));
        }
        return w_plus;
    }

    /// Replaces the linear maps by user-supplied ones after checking M_j(0) = 0
    /// and that their central-difference Jacobian matches the linearization.
    EliminationMaps with_user_maps(std::vector<UserMap> maps, double tol = 1e-6) const {
        if (maps.size() != levels()) {
            throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(levels()) + " user maps");
        }
        for (std::size_t j = 1; j <= levels(); ++j) {
            const std::size_t a = arity(j);
            const auto& f = maps[j - 1];
            if (std::abs(f(VectorXd::Zero(static_cast<Eigen::Index>(a)))) > 1e-12) {
                throw Error(ErrorCode::InconsistentBoundaryMap, "user map of level " + std::to_string(j) + " does not vanish at 0");
            }
            const double eps = 1e-6;
            for (std::size_t c = 0; c < a; ++c) {
                VectorXd e = VectorXd::Zero(static_cast<Eigen::Index>(a));
                e[static_cast<Eigen::Index>(c)] = eps;
                const double d = (f(e) - f(-e)) / (2 * eps);
                const double ref = coefficients(j)[static_cast<Eigen::Index>(c)];
                if (std::abs(d - ref) > tol * std::max(1.0, std::abs(ref))) {
                    throw Error(ErrorCode::InconsistentBoundaryMap,
                                "user map of level " + std::to_string(j) + " has Jacobian inconsistent with B");
                }
            }
        }
        EliminationMaps out = *this;
        out.user_ = std::move(maps);
        return out;
    }

private:
    friend EliminationMaps boundary_elimination(const MatrixXd& B);

    std::size_t k_ = 0;
    std::size_t m_ = 0;
    std::size_t feedback_levels_ = 0;
    std::vector<Eigen::RowVectorXd> coefficients_;
    std::vector<UserMap> user_;
};

/// Builds M_1..M_L with L = min{k, m-1}, extended to min{k, m} when the
/// order-min{k,m} trailing minor is invertible. Each level solves the
/// trailing j x j block by partial-pivoting LU.
inline EliminationMaps boundary_elimination(const MatrixXd& B) {
    if (!in_class_B(B)) throw Error(ErrorCode::NotInClassB, "boundary matrix is not in class B");
    const std::size_t k = static_cast<std::size_t>(B.rows()), m = static_cast<std::size_t>(B.cols());
    EliminationMaps out;
    out.k_ = k;
    out.m_ = m;
    out.feedback_levels_ = std::min(k, m - 1);
    std::size_t levels = out.feedback_levels_;
    if (std::min(k, m) > levels && trailing_minor_invertible(B, std::min(k, m)).invertible) levels = std::min(k, m);
    for (std::size_t j = 1; j <= levels; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const auto free = static_cast<Eigen::Index>(m - j);
        const MatrixXd rows = B.bottomRows(jj);
        const MatrixXd block = rows.rightCols(jj);
        const MatrixXd lead = rows.leftCols(free);
        // rows * w_+ = 0  =>  eta = -block^{-1} lead xi; M_j is the first row.
        const MatrixXd eta_map = -block.partialPivLu().solve(lead);
        out.coefficients_.push_back(eta_map.row(0));
    }
    return out;
}

}  // namespace hypctrl
