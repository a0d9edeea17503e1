#pragma once

// Independent oracles: Gaussian barycenter fixed point, log-domain Sinkhorn
// with primal/dual values, and exact assignment-based empirical W2.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cwb/regularization.hpp"
#include "cwb/types.hpp"

namespace cwb {

struct GaussianParams {
    Vector mean;
    Matrix covariance;
};

/// Symmetric PSD square root via eigendecomposition; eigenvalues down to
/// -1e-10 (relative) are clamped to zero.
inline Matrix matrix_sqrt_psd(const Matrix& M) {
    if (M.rows() != M.cols()) throw DimensionError("matrix_sqrt_psd: matrix is not square");
    const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw InvalidArgument("matrix_sqrt_psd: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()));
    Vector ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-10 * scale) throw InvalidArgument("matrix_sqrt_psd: matrix is not positive semidefinite");
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

namespace detail {
inline Matrix inverse_sqrt_pd(const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()));
    if (es.eigenvalues().minCoeff() <= 0.0) throw InvalidArgument("inverse square root: matrix is not positive definite");
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

/// Fixed point S <- S^{-1/2} (sum_i w_i (S^{1/2} Sigma_i S^{1/2})^{1/2})^2 S^{-1/2}
/// from S_0 = sum_i w_i Sigma_i; stops when the Frobenius step is <= tol.
inline GaussianParams gaussian_fixed_point(const std::vector<GaussianParams>& inputs, const Vector& weights, double tol = 1e-12,
                                           int max_iter = 10000) {
    if (inputs.empty()) throw InvalidArgument("gaussian_fixed_point: no inputs");
    if (!(tol > 0.0)) throw InvalidArgument("gaussian_fixed_point: tol must be positive");
    require_dim(weights.size(), static_cast<Eigen::Index>(inputs.size()), "gaussian_fixed_point weights");
    const auto d = inputs.front().mean.size();
    GaussianParams out{Vector::Zero(d), Matrix::Zero(d, d)};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        require_dim(inputs[i].mean.size(), d, "gaussian_fixed_point mean");
        require_dim(inputs[i].covariance.rows(), d, "gaussian_fixed_point covariance");
        Eigen::LLT<Matrix> llt(inputs[i].covariance);
        if (llt.info() != Eigen::Success) throw InvalidArgument("gaussian_fixed_point: covariance is not positive definite");
        out.mean += weights[static_cast<Eigen::Index>(i)] * inputs[i].mean;
        out.covariance += weights[static_cast<Eigen::Index>(i)] * inputs[i].covariance;
    }
    Matrix S = out.covariance;
    for (int it = 0; it < max_iter; ++it) {
        const Matrix root = matrix_sqrt_psd(S);
        const Matrix inv_root = detail::inverse_sqrt_pd(S);
        Matrix inner = Matrix::Zero(d, d);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const Matrix t = root * inputs[i].covariance * root;
            inner += weights[static_cast<Eigen::Index>(i)] * matrix_sqrt_psd(0.5 * (t + t.transpose()));
        }
        Matrix next = inv_root * inner * inner * inv_root;
        next = 0.5 * (next + next.transpose());
        const double step = (next - S).norm();
        S = std::move(next);
        if (step <= tol) {
            out.covariance = S;
            return out;
        }
    }
    throw ConvergenceError("gaussian_fixed_point: no convergence within " + std::to_string(max_iter) + " iterations");
}

struct DiscreteMeasure {
    PointSet atoms;
    Vector weights;

    static DiscreteMeasure uniform(PointSet atoms) {
        const auto m = atoms.cols();
        return DiscreteMeasure{std::move(atoms), Vector::Constant(m, 1.0 / static_cast<double>(m))};
    }

    void validate() const {
        require_dim(weights.size(), atoms.cols(), "discrete measure weights");
        if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12) {
            throw InvalidArgument("discrete measure: weights must be nonnegative and sum to 1");
        }
    }
};

struct SinkhornResult {
    Matrix plan;
    Vector f;  // dual potential on the first measure
    Vector g;  // dual potential on the second measure
    double primal = 0.0;
    double dual = 0.0;
    double marginal_error = 0.0;
    int iterations = 0;
};

/// Regularized primal cost of a plan with regularizing measure mu (x) nu:
/// <C, plan> + sum_ij xi_ij R(plan_ij / xi_ij).
inline double regularized_primal_value(const Vector& mu, const Vector& nu, const Matrix& cost, double epsilon, const Matrix& plan) {
    const RegularizerSpec spec{Family::entropic, epsilon, false};
    double v = 0.0;
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        for (Eigen::Index j = 0; j < cost.cols(); ++j) {
            const double xi = mu[i] * nu[j];
            if (xi <= 0.0) continue;
            v += plan(i, j) * cost(i, j) + xi * r_primal(spec, plan(i, j) / xi);
        }
    }
    return v;
}

/// Entropic dual objective <mu, f> + <nu, g> - sum_ij xi_ij R*(f_i + g_j - C_ij).
inline double regularized_dual_value(const Vector& mu, const Vector& nu, const Matrix& cost, double epsilon, const Vector& f,
                                     const Vector& g) {
    const RegularizerSpec spec{Family::entropic, epsilon, false};
    double v = mu.dot(f) + nu.dot(g);
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        for (Eigen::Index j = 0; j < cost.cols(); ++j) v -= mu[i] * nu[j] * r_star(spec, f[i] + g[j] - cost(i, j));
    }
    return v;
}

namespace detail {
inline double log_sum_exp(const Eigen::Ref<const Vector>& a) {
    const double top = a.maxCoeff();
    if (!std::isfinite(top)) return top;
    return top + std::log((a.array() - top).exp().sum());
}
}  // namespace detail

/// Log-domain Sinkhorn for entropic OT with regularizing measure mu (x) nu.
/// Stops when the column-marginal violation (L1) is <= tol.
inline SinkhornResult sinkhorn(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const Matrix& cost, const RegularizerSpec& spec,
                               double tol = 1e-12, int max_iter = 100000) {
    mu.validate();
    nu.validate();
    if (spec.family != Family::entropic) throw InvalidArgument("sinkhorn: only the entropic family is supported");
    spec.validate();
    require_dim(cost.rows(), mu.weights.size(), "sinkhorn cost rows");
    require_dim(cost.cols(), nu.weights.size(), "sinkhorn cost cols");
    const double eps = spec.epsilon;
    const auto m = cost.rows();
    const auto k = cost.cols();
    const Vector log_mu = mu.weights.array().log();
    const Vector log_nu = nu.weights.array().log();
    SinkhornResult r;
    r.f = Vector::Zero(m);
    r.g = Vector::Zero(k);
    Vector tmp_k(k);
    Vector tmp_m(m);
    for (int it = 1; it <= max_iter; ++it) {
        for (Eigen::Index i = 0; i < m; ++i) {
            tmp_k = log_nu.array() + (r.g.transpose() - cost.row(i)).array().transpose() / eps;
            r.f[i] = -eps * detail::log_sum_exp(tmp_k);
        }
        for (Eigen::Index j = 0; j < k; ++j) {
            tmp_m = log_mu.array() + (r.f - cost.col(j)).array() / eps;
            r.g[j] = -eps * detail::log_sum_exp(tmp_m);
        }
        // After the g update columns are exact; measure the row violation.
        double err = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            tmp_k = log_nu.array() + (r.g.transpose() - cost.row(i)).array().transpose() / eps;
            err += std::abs(mu.weights[i] * std::exp(r.f[i] / eps + detail::log_sum_exp(tmp_k)) - mu.weights[i]);
        }
        r.iterations = it;
        r.marginal_error = err;
        if (err <= tol) break;
        if (it == max_iter) throw ConvergenceError("sinkhorn: marginal error " + std::to_string(err) + " after " + std::to_string(it) + " iterations");
    }
    r.plan.resize(m, k);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            r.plan(i, j) = mu.weights[i] * nu.weights[j] * std::exp((r.f[i] + r.g[j] - cost(i, j)) / eps);
        }
    }
    r.primal = regularized_primal_value(mu.weights, nu.weights, cost, eps, r.plan);
    r.dual = regularized_dual_value(mu.weights, nu.weights, cost, eps, r.f, r.g);
    return r;
}

inline double duality_gap(const SinkhornResult& r) { return std::abs(r.primal - r.dual) / std::max(1.0, std::abs(r.primal)); }

/// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
/// paths with potentials, O(m^3)). Returns the column assigned to each row.
inline std::vector<Eigen::Index> solve_assignment(const Matrix& cost) {
    if (cost.rows() != cost.cols()) throw DimensionError("solve_assignment: cost matrix is not square");
    const auto n = cost.rows();
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<Eigen::Index> match(static_cast<std::size_t>(n + 1), 0);  // column -> row (1-based)
    std::vector<Eigen::Index> way(static_cast<std::size_t>(n + 1), 0);
    std::vector<double> minv(static_cast<std::size_t>(n + 1));
    std::vector<char> used(static_cast<std::size_t>(n + 1));
    for (Eigen::Index row = 1; row <= n; ++row) {
        match[0] = row;
        Eigen::Index col0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[static_cast<std::size_t>(col0)] = 1;
            const Eigen::Index row0 = match[static_cast<std::size_t>(col0)];
            double delta = kInf;
            Eigen::Index col1 = 0;
            for (Eigen::Index j = 1; j <= n; ++j) {
                const auto uj = static_cast<std::size_t>(j);
                if (used[uj]) continue;
                const double cur = cost(row0 - 1, j - 1) - u[static_cast<std::size_t>(row0)] - v[uj];
                if (cur < minv[uj]) {
                    minv[uj] = cur;
                    way[uj] = col0;
                }
                if (minv[uj] < delta) {
                    delta = minv[uj];
                    col1 = j;
                }
            }
            for (Eigen::Index j = 0; j <= n; ++j) {
                const auto uj = static_cast<std::size_t>(j);
                if (used[uj]) {
                    u[static_cast<std::size_t>(match[uj])] += delta;
                    v[uj] -= delta;
                } else {
                    minv[uj] -= delta;
                }
            }
            col0 = col1;
        } while (match[static_cast<std::size_t>(col0)] != 0);
        do {
            const Eigen::Index col1 = way[static_cast<std::size_t>(col0)];
            match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
            col0 = col1;
        } while (col0 != 0);
    }
    std::vector<Eigen::Index> assignment(static_cast<std::size_t>(n), -1);
    for (Eigen::Index j = 1; j <= n; ++j) assignment[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return assignment;
}

/// Squared-cost empirical W2 between equal-size uniform point sets:
/// min over permutations of (1/m) sum_k |a_k - b_sigma(k)|^2 (no square root).
inline double empirical_w2(const PointSet& A, const PointSet& B) {
    require_dim(B.rows(), A.rows(), "empirical_w2 dimension");
    if (A.cols() != B.cols()) throw DimensionError("empirical_w2: point sets differ in size");
    if (A.cols() == 0) throw InvalidArgument("empirical_w2: empty point sets");
    const Matrix C = CostFunction::squared_euclidean().pairwise(A, B);
    const auto assignment = solve_assignment(C);
    double total = 0.0;
    for (Eigen::Index k = 0; k < A.cols(); ++k) total += C(k, assignment[static_cast<std::size_t>(k)]);
    return total / static_cast<double>(A.cols());
}

}  // namespace cwb
