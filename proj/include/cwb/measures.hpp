#pragma once

// Input distributions, the barycenter support measure and input centering.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cwb/types.hpp"

namespace cwb {

struct Box {
    Vector lo;
    Vector hi;

    Box() = default;
    Box(Vector lo_, Vector hi_) : lo(std::move(lo_)), hi(std::move(hi_)) { validate(); }

    void validate() const {
        if (lo.size() < 1) throw InvalidArgument("Box: dimension must be at least 1");
        require_dim(hi.size(), lo.size(), "Box");
        for (Eigen::Index k = 0; k < lo.size(); ++k) {
            if (!(lo[k] < hi[k])) throw InvalidArgument("Box: lo must be strictly below hi on every axis");
        }
    }

    [[nodiscard]] int dim() const { return static_cast<int>(lo.size()); }
    [[nodiscard]] Vector extent() const { return hi - lo; }
    [[nodiscard]] double diagonal() const { return extent().norm(); }
    [[nodiscard]] double volume() const { return extent().prod(); }
    [[nodiscard]] Vector center() const { return 0.5 * (lo + hi); }

    [[nodiscard]] bool contains(const Eigen::Ref<const Vector>& x) const {
        return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    }
    [[nodiscard]] bool contains(const Box& other, double slack = 0.0) const {
        return (other.lo.array() >= lo.array() - slack).all() && (other.hi.array() <= hi.array() + slack).all();
    }
};

namespace source {

struct Gaussian {
    Vector mean;
    Matrix covariance;
    Matrix chol;  // lower Cholesky factor of covariance

    Gaussian() = default;
    Gaussian(Vector m, Matrix cov) : mean(std::move(m)), covariance(std::move(cov)) {
        require_dim(covariance.rows(), mean.size(), "Gaussian covariance rows");
        require_dim(covariance.cols(), mean.size(), "Gaussian covariance cols");
        if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, covariance.cwiseAbs().maxCoeff())) {
            throw InvalidArgument("Gaussian: covariance is not symmetric");
        }
        Eigen::LLT<Matrix> llt(covariance);
        if (llt.info() != Eigen::Success) throw InvalidArgument("Gaussian: covariance is not positive definite");
        chol = llt.matrixL();
    }

    [[nodiscard]] double log_density(const Eigen::Ref<const Vector>& x) const {
        const auto d = static_cast<double>(mean.size());
        Vector z = chol.triangularView<Eigen::Lower>().solve(x - mean);
        const double log_det = 2.0 * chol.diagonal().array().log().sum();
        return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
    }
};

struct GaussianMixture {
    std::vector<Gaussian> components;
    Vector weights;
};

struct UniformBox {
    Box box;
};

/// Uniform on {r_in <= |x - center| <= r_out} in the plane.
struct Annulus {
    Vector center;
    double inner = 0.0;
    double outer = 1.0;
};

/// Uniform on a (possibly rotated) filled ellipse in the plane.
struct Ellipse {
    Vector center;
    double semi_a = 1.0;
    double semi_b = 1.0;
    double angle = 0.0;
};

/// Piecewise-constant density over the pixels of a 2D intensity image.
/// Row 0 is the top of the image; pixel mass is proportional to intensity.
struct Raster {
    Box box;
    int rows = 0;
    int cols = 0;
    std::vector<double> mass;  // row-major, sums to 1
};

struct Empirical {
    PointSet points;
};

}  // namespace source

/// A sampleable distribution on R^d, optionally translated by `shift`.
class MeasureSource {
public:
    using Kind = std::variant<source::Gaussian, source::GaussianMixture, source::UniformBox, source::Annulus,
                              source::Ellipse, source::Raster, source::Empirical>;

    static MeasureSource gaussian(Vector mean, Matrix covariance) {
        return MeasureSource(source::Gaussian(std::move(mean), std::move(covariance)));
    }

    static MeasureSource gaussian_mixture(std::vector<source::Gaussian> components, Vector weights) {
        if (components.empty()) throw InvalidArgument("gaussian mixture: no components");
        require_dim(weights.size(), static_cast<Eigen::Index>(components.size()), "gaussian mixture weights");
        if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
            throw InvalidArgument("gaussian mixture: weights must be nonnegative and sum to 1");
        }
        const auto d = components.front().mean.size();
        for (const auto& c : components) require_dim(c.mean.size(), d, "gaussian mixture component");
        return MeasureSource(source::GaussianMixture{std::move(components), std::move(weights)});
    }

    static MeasureSource uniform_box(Box box) {
        box.validate();
        return MeasureSource(source::UniformBox{std::move(box)});
    }

    static MeasureSource annulus(Vector center, double inner, double outer) {
        require_dim(center.size(), 2, "annulus center");
        if (!(inner >= 0.0 && outer > inner)) throw InvalidArgument("annulus: need 0 <= inner < outer");
        return MeasureSource(source::Annulus{std::move(center), inner, outer});
    }

    static MeasureSource ellipse(Vector center, double semi_a, double semi_b, double angle = 0.0) {
        require_dim(center.size(), 2, "ellipse center");
        if (!(semi_a > 0.0 && semi_b > 0.0)) throw InvalidArgument("ellipse: semi-axes must be positive");
        return MeasureSource(source::Ellipse{std::move(center), semi_a, semi_b, angle});
    }

    /// `intensity` is row-major with `rows * cols` nonnegative entries.
    static MeasureSource raster(Box box, int rows, int cols, std::vector<double> intensity) {
        require_dim(box.dim(), 2, "raster box");
        box.validate();
        if (rows < 1 || cols < 1 || intensity.size() != static_cast<std::size_t>(rows) * cols) {
            throw InvalidArgument("raster: intensity grid does not match rows x cols");
        }
        double total = 0.0;
        for (double v : intensity) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("raster: intensities must be finite and nonnegative");
            total += v;
        }
        if (total <= 0.0) throw InvalidArgument("raster: image has no mass");
        for (double& v : intensity) v /= total;
        return MeasureSource(source::Raster{std::move(box), rows, cols, std::move(intensity)});
    }

    static MeasureSource empirical(PointSet points) {
        if (points.cols() < 1 || points.rows() < 1) throw InvalidArgument("empirical source: point list is empty");
        if (!points.allFinite()) throw InvalidArgument("empirical source: non-finite coordinates");
        return MeasureSource(source::Empirical{std::move(points)});
    }

    [[nodiscard]] int dim() const { return static_cast<int>(shift_.size()); }
    [[nodiscard]] const Kind& kind() const { return kind_; }
    [[nodiscard]] const Vector& shift() const { return shift_; }
    [[nodiscard]] bool has_density() const { return !std::holds_alternative<source::Empirical>(kind_); }
    [[nodiscard]] bool is_empirical() const { return !has_density(); }

    /// Same distribution translated by `delta`.
    [[nodiscard]] MeasureSource shifted(const Vector& delta) const {
        require_dim(delta.size(), dim(), "shift");
        MeasureSource out = *this;
        out.shift_ += delta;
        return out;
    }

    /// Fills every column of `out` with an independent draw.
    void sample_into(Eigen::Ref<Matrix> out, Rng& rng) const {
        require_dim(out.rows(), dim(), "sample request");
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            draw(out.col(j), rng);
            out.col(j) += shift_;
        }
    }

    [[nodiscard]] PointSet sample(Eigen::Index n, Rng& rng) const {
        if (n < 1) throw InvalidArgument("sample: n must be at least 1");
        PointSet out(dim(), n);
        sample_into(out, rng);
        return out;
    }

    /// Log density at x, -inf outside the support; nullopt for empirical sources.
    [[nodiscard]] std::optional<double> log_density(const Eigen::Ref<const Vector>& x_in) const {
        require_dim(x_in.size(), dim(), "log_density");
        const Vector x = x_in - shift_;
        constexpr double kNegInf = -std::numeric_limits<double>::infinity();
        return std::visit(
            [&](const auto& k) -> std::optional<double> {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, source::Gaussian>) {
                    return k.log_density(x);
                } else if constexpr (std::is_same_v<T, source::GaussianMixture>) {
                    std::vector<double> terms;
                    double top = kNegInf;
                    for (std::size_t c = 0; c < k.components.size(); ++c) {
                        if (k.weights[static_cast<Eigen::Index>(c)] <= 0.0) continue;
                        terms.push_back(std::log(k.weights[static_cast<Eigen::Index>(c)]) + k.components[c].log_density(x));
                        top = std::max(top, terms.back());
                    }
                    double acc = 0.0;
                    for (double t : terms) acc += std::exp(t - top);
                    return top + std::log(acc);
                } else if constexpr (std::is_same_v<T, source::UniformBox>) {
                    return k.box.contains(x) ? -std::log(k.box.volume()) : kNegInf;
                } else if constexpr (std::is_same_v<T, source::Annulus>) {
                    const double r = (x - k.center).norm();
                    if (r < k.inner || r > k.outer) return kNegInf;
                    return -std::log(std::numbers::pi * (k.outer * k.outer - k.inner * k.inner));
                } else if constexpr (std::is_same_v<T, source::Ellipse>) {
                    const Vector local = to_ellipse_frame(k, x);
                    if (local.squaredNorm() > 1.0) return kNegInf;
                    return -std::log(std::numbers::pi * k.semi_a * k.semi_b);
                } else if constexpr (std::is_same_v<T, source::Raster>) {
                    const auto pixel = raster_pixel(k, x);
                    if (!pixel) return kNegInf;
                    const double m = k.mass[*pixel];
                    if (m <= 0.0) return kNegInf;
                    const double area = k.box.volume() / (static_cast<double>(k.rows) * k.cols);
                    return std::log(m / area);
                } else {
                    return std::nullopt;
                }
            },
            kind_);
    }

    /// Exact mean: closed form for analytic kinds, atom average for empirical ones.
    [[nodiscard]] Vector mean() const {
        Vector m = std::visit(
            [&](const auto& k) -> Vector {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, source::Gaussian>) {
                    return k.mean;
                } else if constexpr (std::is_same_v<T, source::GaussianMixture>) {
                    Vector acc = Vector::Zero(k.components.front().mean.size());
                    for (std::size_t c = 0; c < k.components.size(); ++c) {
                        acc += k.weights[static_cast<Eigen::Index>(c)] * k.components[c].mean;
                    }
                    return acc;
                } else if constexpr (std::is_same_v<T, source::UniformBox>) {
                    return k.box.center();
                } else if constexpr (std::is_same_v<T, source::Annulus> || std::is_same_v<T, source::Ellipse>) {
                    return k.center;
                } else if constexpr (std::is_same_v<T, source::Raster>) {
                    Vector acc = Vector::Zero(2);
                    for (int r = 0; r < k.rows; ++r) {
                        for (int c = 0; c < k.cols; ++c) {
                            acc += k.mass[static_cast<std::size_t>(r) * k.cols + c] * pixel_center(k, r, c);
                        }
                    }
                    return acc;
                } else {
                    return k.points.rowwise().mean();
                }
            },
            kind_);
        return m + shift_;
    }

private:
    explicit MeasureSource(Kind kind) : kind_(std::move(kind)) {
        const int d = std::visit(
            [](const auto& k) -> int {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, source::Gaussian>) return static_cast<int>(k.mean.size());
                else if constexpr (std::is_same_v<T, source::GaussianMixture>) return static_cast<int>(k.components.front().mean.size());
                else if constexpr (std::is_same_v<T, source::UniformBox>) return k.box.dim();
                else if constexpr (std::is_same_v<T, source::Empirical>) return static_cast<int>(k.points.rows());
                else return 2;
            },
            kind_);
        shift_ = Vector::Zero(d);
    }

    static Vector to_ellipse_frame(const source::Ellipse& e, const Vector& x) {
        const Vector v = x - e.center;
        const double c = std::cos(e.angle);
        const double s = std::sin(e.angle);
        Vector local(2);
        local << (c * v[0] + s * v[1]) / e.semi_a, (-s * v[0] + c * v[1]) / e.semi_b;
        return local;
    }

    static Vector pixel_center(const source::Raster& k, int r, int c) {
        const Vector ext = k.box.extent();
        Vector p(2);
        p << k.box.lo[0] + (c + 0.5) * ext[0] / k.cols, k.box.hi[1] - (r + 0.5) * ext[1] / k.rows;
        return p;
    }

    static std::optional<std::size_t> raster_pixel(const source::Raster& k, const Vector& x) {
        if (!k.box.contains(x)) return std::nullopt;
        const Vector ext = k.box.extent();
        int c = static_cast<int>(std::floor((x[0] - k.box.lo[0]) / ext[0] * k.cols));
        int r = static_cast<int>(std::floor((k.box.hi[1] - x[1]) / ext[1] * k.rows));
        c = std::clamp(c, 0, k.cols - 1);
        r = std::clamp(r, 0, k.rows - 1);
        return static_cast<std::size_t>(r) * k.cols + c;
    }

    void draw(Eigen::Ref<Vector> out, Rng& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::visit(
            [&](const auto& k) {
                using T = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<T, source::Gaussian>) {
                    Vector z(k.mean.size());
                    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
                    out = k.mean + k.chol * z;
                } else if constexpr (std::is_same_v<T, source::GaussianMixture>) {
                    const double u = unit(rng);
                    std::size_t c = 0;
                    double acc = k.weights[0];
                    while (u >= acc && c + 1 < k.components.size()) acc += k.weights[static_cast<Eigen::Index>(++c)];
                    const auto& g = k.components[c];
                    Vector z(g.mean.size());
                    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
                    out = g.mean + g.chol * z;
                } else if constexpr (std::is_same_v<T, source::UniformBox>) {
                    for (Eigen::Index i = 0; i < out.size(); ++i) {
                        out[i] = k.box.lo[i] + unit(rng) * (k.box.hi[i] - k.box.lo[i]);
                    }
                } else if constexpr (std::is_same_v<T, source::Annulus>) {
                    const double r2 = k.inner * k.inner + unit(rng) * (k.outer * k.outer - k.inner * k.inner);
                    const double theta = 2.0 * std::numbers::pi * unit(rng);
                    out[0] = k.center[0] + std::sqrt(r2) * std::cos(theta);
                    out[1] = k.center[1] + std::sqrt(r2) * std::sin(theta);
                } else if constexpr (std::is_same_v<T, source::Ellipse>) {
                    const double r = std::sqrt(unit(rng));
                    const double theta = 2.0 * std::numbers::pi * unit(rng);
                    const double a = k.semi_a * r * std::cos(theta);
                    const double b = k.semi_b * r * std::sin(theta);
                    const double c = std::cos(k.angle);
                    const double s = std::sin(k.angle);
                    out[0] = k.center[0] + c * a - s * b;
                    out[1] = k.center[1] + s * a + c * b;
                } else if constexpr (std::is_same_v<T, source::Raster>) {
                    const double u = unit(rng);
                    std::size_t idx = 0;
                    double acc = k.mass[0];
                    while (u >= acc && idx + 1 < k.mass.size()) acc += k.mass[++idx];
                    const int r = static_cast<int>(idx / static_cast<std::size_t>(k.cols));
                    const int c = static_cast<int>(idx % static_cast<std::size_t>(k.cols));
                    const Vector ext = k.box.extent();
                    out[0] = k.box.lo[0] + (c + unit(rng)) * ext[0] / k.cols;
                    out[1] = k.box.hi[1] - (r + unit(rng)) * ext[1] / k.rows;
                } else {
                    std::uniform_int_distribution<Eigen::Index> pick(0, k.points.cols() - 1);
                    out = k.points.col(pick(rng));
                }
            },
            kind_);
    }

    Kind kind_;
    Vector shift_;
};

/// The barycenter support measure: uniform on `box`, unless a specific
/// (e.g. discrete) measure is supplied.
struct SupportMeasure {
    Box box;
    std::optional<MeasureSource> custom;

    static SupportMeasure uniform(Box b) { return SupportMeasure{std::move(b), std::nullopt}; }

    static SupportMeasure from_source(Box b, MeasureSource src) {
        require_dim(src.dim(), b.dim(), "support measure");
        return SupportMeasure{std::move(b), std::move(src)};
    }

    [[nodiscard]] int dim() const { return box.dim(); }
    [[nodiscard]] bool is_uniform() const { return !custom.has_value(); }

    void sample_into(Eigen::Ref<Matrix> out, Rng& rng) const {
        if (custom) {
            custom->sample_into(out, rng);
            return;
        }
        require_dim(out.rows(), dim(), "support sample request");
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (Eigen::Index j = 0; j < out.cols(); ++j) {
            for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = box.lo[i] + unit(rng) * (box.hi[i] - box.lo[i]);
        }
    }

    [[nodiscard]] PointSet sample(Eigen::Index n, Rng& rng) const {
        PointSet out(dim(), n);
        sample_into(out, rng);
        return out;
    }

    [[nodiscard]] std::optional<double> log_density(const Eigen::Ref<const Vector>& y) const {
        if (custom) return custom->log_density(y);
        return box.contains(y) ? -std::log(box.volume()) : -std::numeric_limits<double>::infinity();
    }
};

inline void validate_weights(const Vector& weights, std::size_t n) {
    if (weights.size() != static_cast<Eigen::Index>(n)) {
        throw InvalidArgument("weights: expected " + std::to_string(n) + " entries, got " + std::to_string(weights.size()));
    }
    if ((weights.array() < 0.0).any() || !weights.allFinite()) throw InvalidArgument("weights must be finite and nonnegative");
    if (std::abs(weights.sum() - 1.0) > 1e-9) throw InvalidArgument("weights must sum to 1");
}

/// Coordinate-wise min/max over `n_probe` draws per source, widened by
/// `margin` times the per-axis extent. Axes with zero extent are widened
/// symmetrically to `floor_width`.
inline SupportMeasure estimate_bounding_box(std::span<const MeasureSource> sources, Eigen::Index n_probe, Rng& rng,
                                            double margin = 0.1, double floor_width = 1.0) {
    if (sources.empty()) throw InvalidArgument("estimate_bounding_box: no sources");
    if (n_probe < 1) throw InvalidArgument("estimate_bounding_box: n_probe must be at least 1");
    if (margin < 0.0) throw InvalidArgument("estimate_bounding_box: margin must be nonnegative");
    const int d = sources.front().dim();
    Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
    Vector hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
    for (const auto& src : sources) {
        require_dim(src.dim(), d, "estimate_bounding_box");
        const PointSet probe = src.sample(n_probe, rng);
        lo = lo.cwiseMin(probe.rowwise().minCoeff());
        hi = hi.cwiseMax(probe.rowwise().maxCoeff());
    }
    for (int k = 0; k < d; ++k) {
        const double extent = hi[k] - lo[k];
        if (extent <= 0.0) {
            lo[k] -= 0.5 * floor_width;
            hi[k] += 0.5 * floor_width;
        } else {
            lo[k] -= margin * extent;
            hi[k] += margin * extent;
        }
    }
    return SupportMeasure::uniform(Box(lo, hi));
}

struct CenteringRecord {
    std::vector<Vector> means;
    Vector weights;
    Vector barycenter_mean;
};

/// Shifts every source to zero mean. The barycenter of the originals is the
/// barycenter of the centered sources translated by sum_i w_i m_i.
inline std::pair<std::vector<MeasureSource>, CenteringRecord> center_inputs(std::span<const MeasureSource> sources,
                                                                           const Vector& weights) {
    validate_weights(weights, sources.size());
    CenteringRecord record;
    record.weights = weights;
    std::vector<MeasureSource> centered;
    centered.reserve(sources.size());
    const int d = sources.front().dim();
    record.barycenter_mean = Vector::Zero(d);
    for (std::size_t i = 0; i < sources.size(); ++i) {
        require_dim(sources[i].dim(), d, "center_inputs");
        Vector m = sources[i].mean();
        record.barycenter_mean += weights[static_cast<Eigen::Index>(i)] * m;
        centered.push_back(sources[i].shifted(-m));
        record.means.push_back(std::move(m));
    }
    return {std::move(centered), std::move(record)};
}

namespace detail {

inline bool parse_double(const std::string& token, double& out) {
    std::size_t first = token.find_first_not_of(" \t\r");
    if (first == std::string::npos) return false;
    const std::size_t last = token.find_last_not_of(" \t\r");
    const std::string trimmed = token.substr(first, last - first + 1);
    char* end = nullptr;
    out = std::strtod(trimmed.c_str(), &end);
    return end == trimmed.c_str() + trimmed.size();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace detail

/// One point per row, comma separated. Lines starting with '#' are comments;
/// a first row whose first token is not numeric is treated as a header.
inline PointSet parse_points_csv(std::istream& in, const std::string& origin = "<stream>") {
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first_row = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto fields = detail::split_csv_line(line);
        double v = 0.0;
        if (first_row && !detail::parse_double(fields.front(), v)) {
            first_row = false;
            continue;
        }
        first_row = false;
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& f : fields) {
            if (!detail::parse_double(f, v)) {
                throw IoError(origin + ":" + std::to_string(line_no) + ": not a number: '" + f + "'");
            }
            row.push_back(v);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw IoError(origin + ":" + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                          " fields, got " + std::to_string(row.size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw IoError(origin + ": no data rows");
    PointSet pts(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t i = 0; i < rows[j].size(); ++i) pts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j][i];
    }
    return pts;
}

inline PointSet read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_points_csv(in, path);
}

}  // namespace cwb
