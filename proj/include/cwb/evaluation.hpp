#pragma once

// Metrics comparing recovered barycenters with oracles.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cwb/baselines.hpp"
#include "cwb/types.hpp"

namespace cwb {

/// Sample mean and 1/m-normalized covariance.
inline GaussianParams gaussian_mle_fit(const PointSet& samples) {
    if (samples.cols() < 2) throw InvalidArgument("gaussian_mle_fit: need at least 2 samples");
    GaussianParams out;
    out.mean = samples.rowwise().mean();
    const Matrix centered = samples.colwise() - out.mean;
    out.covariance = centered * centered.transpose() / static_cast<double>(samples.cols());
    return out;
}

inline double covariance_error(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("covariance_error: shape mismatch");
    return (a - b).norm();
}

inline double mean_error(const Vector& a, const Vector& b) {
    require_dim(b.size(), a.size(), "mean_error");
    return (a - b).norm();
}

/// Largest point-set size accepted by the exact assignment solver.
inline constexpr Eigen::Index kAssignmentCap = 2000;

struct W2Point {
    Eigen::Index m = 0;
    double mean = 0.0;
    double std_dev = 0.0;
    std::vector<double> trials;
};

inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline double sample_mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

namespace detail {
// m distinct indices from [0, n), partial Fisher-Yates
inline std::vector<Eigen::Index> pick_indices(Eigen::Index n, Eigen::Index m, Rng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    for (Eigen::Index k = 0; k < m; ++k) {
        std::uniform_int_distribution<Eigen::Index> pick(k, n - 1);
        std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(m));
    return idx;
}

inline PointSet gather(const PointSet& pts, const std::vector<Eigen::Index>& idx) {
    PointSet out(pts.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = pts.col(idx[k]);
    return out;
}
}  // namespace detail

/// Empirical W2 between size-m subsamples (without replacement) of both sets,
/// repeated `trials` times for every m. Both sides are subsampled with the same
/// index draw, so a set compared with itself gives exactly 0.
inline std::vector<W2Point> w2_curve(const PointSet& barycenter, const PointSet& reference, const std::vector<Eigen::Index>& sizes,
                                     int trials, Rng& rng) {
    require_dim(reference.rows(), barycenter.rows(), "w2_curve");
    if (trials < 1) throw InvalidArgument("w2_curve: trials must be at least 1");
    const Eigen::Index pool = std::min(barycenter.cols(), reference.cols());
    std::vector<W2Point> out;
    Eigen::Index prev = 0;
    for (Eigen::Index m : sizes) {
        if (m < prev) throw InvalidArgument("w2_curve: sizes must be nondecreasing");
        if (m < 1) throw InvalidArgument("w2_curve: sizes must be positive");
        if (m > kAssignmentCap) throw InvalidArgument("w2_curve: size " + std::to_string(m) + " exceeds the assignment cap " + std::to_string(kAssignmentCap));
        if (m > pool) throw InvalidArgument("w2_curve: not enough samples for size " + std::to_string(m));
        prev = m;
        W2Point p;
        p.m = m;
        for (int t = 0; t < trials; ++t) {
            const auto idx = detail::pick_indices(pool, m, rng);
            p.trials.push_back(empirical_w2(detail::gather(barycenter, idx), detail::gather(reference, idx)));
        }
        p.mean = sample_mean(p.trials);
        p.std_dev = sample_std(p.trials);
        out.push_back(std::move(p));
    }
    return out;
}

struct EvalRecord {
    std::uint64_t seed = 0;
    std::string method;
    double covariance_error = 0.0;
    double mean_error = 0.0;
    std::optional<double> w2;
    double wall_ms = 0.0;
    std::vector<std::string> flags;  // degenerate-output notes, summary only
};

struct Aggregate {
    double mean = 0.0;
    double std_dev = 0.0;
};

struct EvalReport {
    std::vector<EvalRecord> records;

    [[nodiscard]] Aggregate covariance_error() const { return aggregate([](const EvalRecord& r) { return r.covariance_error; }); }
    [[nodiscard]] Aggregate mean_error() const { return aggregate([](const EvalRecord& r) { return r.mean_error; }); }
    [[nodiscard]] std::optional<Aggregate> w2() const {
        std::vector<double> v;
        for (const auto& r : records) {
            if (r.w2) v.push_back(*r.w2);
        }
        if (v.empty()) return std::nullopt;
        return Aggregate{sample_mean(v), sample_std(v)};
    }

    /// Deterministic content only (no wall time), so reruns are byte-identical.
    void write_csv(std::ostream& os, const std::vector<std::string>& header = {}) const {
        for (const auto& h : header) os << "# " << h << '\n';
        os << std::setprecision(17);
        os << "seed,method,covariance_error,mean_error,w2\n";
        for (const auto& r : records) {
            os << r.seed << ',' << r.method << ',' << r.covariance_error << ',' << r.mean_error << ',';
            if (r.w2) os << *r.w2;
            os << '\n';
        }
        const auto c = covariance_error();
        const auto m = mean_error();
        os << "mean,," << c.mean << ',' << m.mean << ',';
        if (auto w = w2()) os << w->mean;
        os << "\nstd,," << c.std_dev << ',' << m.std_dev << ',';
        if (auto w = w2()) os << w->std_dev;
        os << '\n';
    }

    void write_summary(std::ostream& os) const {
        os << std::setprecision(4) << std::scientific;
        for (const auto& r : records) {
            os << "trial seed=" << r.seed << " method=" << r.method << " cov_err=" << r.covariance_error << " mean_err=" << r.mean_error;
            if (r.w2) os << " w2=" << *r.w2;
            os << " wall=" << std::fixed << std::setprecision(1) << r.wall_ms / 1000.0 << "s" << std::scientific << std::setprecision(4) << '\n';
            for (const auto& f : r.flags) os << "  warning: " << f << '\n';
        }
        const auto c = covariance_error();
        const auto m = mean_error();
        os << "covariance error: " << c.mean << " (" << c.std_dev << ")\n";
        os << "mean error:       " << m.mean << " (" << m.std_dev << ")\n";
        if (auto w = w2()) os << "w2:               " << w->mean << " (" << w->std_dev << ")\n";
        os << std::defaultfloat;
    }

private:
    template <class F>
    [[nodiscard]] Aggregate aggregate(F&& get) const {
        std::vector<double> v;
        v.reserve(records.size());
        for (const auto& r : records) v.push_back(get(r));
        return {sample_mean(v), sample_std(v)};
    }
};

}  // namespace cwb
