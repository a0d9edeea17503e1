#pragma once

// Regularizer conjugates R*, their derivatives, the plan density H and the
// ground cost.

#include <cmath>
#include <functional>
#include <string>

#include "cwb/measures.hpp"
#include "cwb/types.hpp"

namespace cwb {

enum class Family { entropic, quadratic };

inline std::string to_string(Family f) { return f == Family::entropic ? "entropic" : "quadratic"; }

inline Family family_from_string(const std::string& s) {
    if (s == "entropic") return Family::entropic;
    if (s == "quadratic") return Family::quadratic;
    throw ConfigError("unknown regularizer family '" + s + "' (expected entropic or quadratic)");
}

struct RegularizerSpec {
    Family family = Family::quadratic;
    double epsilon = 1e-4;
    /// When set, the effective strength is epsilon * (box diagonal)^2.
    bool scale_by_diagonal = false;

    void validate() const {
        if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("regularizer: epsilon must be positive");
    }

    [[nodiscard]] double effective_epsilon(const Box& box) const {
        validate();
        if (!scale_by_diagonal) return epsilon;
        const double diag = box.diagonal();
        return epsilon * diag * diag;
    }

    /// Copy with the scaling folded into epsilon.
    [[nodiscard]] RegularizerSpec resolved(const Box& box) const {
        return RegularizerSpec{family, effective_epsilon(box), false};
    }
};

/// exp(t/eps) beyond this ratio is treated as divergence.
inline constexpr double kEntropicExponentLimit = 700.0;

namespace detail {
inline double entropic_exp(double t, double eps) {
    const double r = t / eps;
    if (r > kEntropicExponentLimit) {
        throw DivergenceError("entropic overflow: t/eps = " + std::to_string(r) + " (eps = " + std::to_string(eps) + ")");
    }
    return std::exp(r);
}
}  // namespace detail

/// Dual regularizer: eps*exp(t/eps) or (t_+)^2/(2 eps).
inline double r_star(const RegularizerSpec& spec, double t) {
    if (spec.family == Family::entropic) return spec.epsilon * detail::entropic_exp(t, spec.epsilon);
    const double p = t > 0.0 ? t : 0.0;
    return p * p / (2.0 * spec.epsilon);
}

inline double r_star_prime(const RegularizerSpec& spec, double t) {
    if (spec.family == Family::entropic) return detail::entropic_exp(t, spec.epsilon);
    return t > 0.0 ? t / spec.epsilon : 0.0;
}

/// Density of the optimal plan against the regularizing measure; equal to
/// r_star_prime(f + g - c).
inline double plan_density_h(const RegularizerSpec& spec, double f_val, double g_val, double cost) {
    return r_star_prime(spec, f_val + g_val - cost);
}

/// Primal regularizer R(t), t >= 0: eps (t ln t - t) or eps t^2 / 2.
inline double r_primal(const RegularizerSpec& spec, double t) {
    if (t < 0.0) throw InvalidArgument("primal regularizer: t must be nonnegative");
    if (spec.family == Family::entropic) return spec.epsilon * ((t > 0.0 ? t * std::log(t) : 0.0) - t);
    return 0.5 * spec.epsilon * t * t;
}

struct CostFunction {
    enum class Kind { squared_euclidean, custom };

    Kind kind = Kind::squared_euclidean;
    std::function<double(const Eigen::Ref<const Vector>&, const Eigen::Ref<const Vector>&)> custom_fn;

    static CostFunction squared_euclidean() { return {}; }

    static CostFunction custom(std::function<double(const Eigen::Ref<const Vector>&, const Eigen::Ref<const Vector>&)> fn) {
        return CostFunction{Kind::custom, std::move(fn)};
    }

    [[nodiscard]] double operator()(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
        require_dim(y.size(), x.size(), "cost");
        if (kind == Kind::custom) return custom_fn(x, y);
        return (x - y).squaredNorm();
    }

    /// Column-paired costs c(X_b, Y_b).
    [[nodiscard]] Vector paired(const Matrix& X, const Matrix& Y) const {
        require_dim(Y.rows(), X.rows(), "paired cost");
        require_dim(Y.cols(), X.cols(), "paired cost count");
        if (kind == Kind::squared_euclidean) return (X - Y).colwise().squaredNorm().transpose();
        Vector out(X.cols());
        for (Eigen::Index b = 0; b < X.cols(); ++b) out[b] = custom_fn(X.col(b), Y.col(b));
        return out;
    }

    /// All-pairs cost matrix, rows indexed by X, columns by Y.
    [[nodiscard]] Matrix pairwise(const Matrix& X, const Matrix& Y) const {
        require_dim(Y.rows(), X.rows(), "pairwise cost");
        Matrix C(X.cols(), Y.cols());
        if (kind == Kind::squared_euclidean) {
            for (Eigen::Index b = 0; b < Y.cols(); ++b) C.col(b) = (X.colwise() - Y.col(b)).colwise().squaredNorm().transpose();
            return C;
        }
        for (Eigen::Index a = 0; a < X.cols(); ++a) {
            for (Eigen::Index b = 0; b < Y.cols(); ++b) C(a, b) = custom_fn(X.col(a), Y.col(b));
        }
        return C;
    }
};

}  // namespace cwb
