#pragma once

// Barycenter recovery from trained dual potentials: grid marginalization,
// Metropolis-Hastings on the plan, barycentric projection, potential-gradient
// maps and fitted Monge networks, plus re-centered pushforward aggregation.

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cwb/adam.hpp"
#include "cwb/dual_solver.hpp"
#include "cwb/measures.hpp"
#include "cwb/potentials.hpp"
#include "cwb/regularization.hpp"

namespace cwb {

enum class RecoveryMethod { grid, mcmc, bproj, gradmap, mongenet };

inline std::string to_string(RecoveryMethod m) {
    switch (m) {
        case RecoveryMethod::grid: return "grid";
        case RecoveryMethod::mcmc: return "mcmc";
        case RecoveryMethod::bproj: return "bproj";
        case RecoveryMethod::gradmap: return "gradmap";
        case RecoveryMethod::mongenet: return "mongenet";
    }
    return "?";
}

inline RecoveryMethod recovery_method_from_string(const std::string& s) {
    for (auto m : {RecoveryMethod::grid, RecoveryMethod::mcmc, RecoveryMethod::bproj, RecoveryMethod::gradmap, RecoveryMethod::mongenet}) {
        if (to_string(m) == s) return m;
    }
    throw ConfigError("unknown recovery method '" + s + "' (expected grid, mcmc, bproj, gradmap or mongenet)");
}

/// The plan pi_i = H(x, y) d(mu_i x eta), held implicitly through f_i and the
/// centered g_i.
struct TransportPlanHandle {
    const Potential* f = nullptr;
    std::function<Vector(const Matrix&)> g;
    RegularizerSpec regularizer;  // effective eps
    CostFunction cost;
    const MeasureSource* source = nullptr;
    const SupportMeasure* support = nullptr;

    static TransportPlanHandle from_duals(const DualPotentials& pots, int i, const MeasureSource& source,
                                          const SupportMeasure& support) {
        if (i < 0 || i >= pots.size()) throw InvalidArgument("plan index out of range");
        TransportPlanHandle h;
        h.f = &pots.f[static_cast<std::size_t>(i)];
        h.g = [&pots, i](const Matrix& Y) { return pots.centered_g(i, Y); };
        h.regularizer = pots.regularizer;
        h.cost = pots.cost;
        h.source = &source;
        h.support = &support;
        return h;
    }

    /// Plan built from an explicit (f, g) pair, g used as given.
    static TransportPlanHandle from_pair(const Potential& f, const Potential& g, RegularizerSpec reg, CostFunction cost,
                                         const MeasureSource& source, const SupportMeasure& support) {
        TransportPlanHandle h;
        h.f = &f;
        h.g = [&g](const Matrix& Y) { return g.values(Y); };
        h.regularizer = reg;
        h.cost = std::move(cost);
        h.source = &source;
        h.support = &support;
        return h;
    }

    [[nodiscard]] int dim() const { return f->dim(); }

    /// H(x_a, y_b) for all pairs; rows follow X, columns follow Y.
    [[nodiscard]] Matrix density(const Matrix& X, const Matrix& Y) const {
        return density_from_values(f->values(X), g(Y), X, Y);
    }

    [[nodiscard]] Matrix density_from_values(const Vector& fx, const Vector& gy, const Matrix& X, const Matrix& Y) const {
        Matrix H = cost.pairwise(X, Y);
        for (Eigen::Index b = 0; b < H.cols(); ++b) {
            for (Eigen::Index a = 0; a < H.rows(); ++a) H(a, b) = plan_density_h(regularizer, fx[a], gy[b], H(a, b));
        }
        return H;
    }

    [[nodiscard]] double density(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
        return density(Matrix(x), Matrix(y))(0, 0);
    }
};

struct BarycenterSampleSet {
    PointSet points;
    RecoveryMethod method = RecoveryMethod::gradmap;
    std::vector<int> source_index;
    Eigen::Index dropped = 0;  // points whose map was undefined (vanishing conditional mass)
};

struct GridSpec {
    Box box;
    std::vector<int> resolution;
    /// true: lambda-average the per-plan grids after normalizing each one.
    /// false: lambda-sum the raw grids and normalize once.
    bool normalize_each = true;
};

/// Cell-centered values on a regular grid, stored with the last axis fastest.
struct DensityGrid {
    Box box;
    std::vector<int> resolution;
    Vector values;
    bool normalized = false;
    bool degenerate = false;

    [[nodiscard]] double cell_volume() const {
        double v = 1.0;
        for (int k = 0; k < box.dim(); ++k) v *= (box.hi[k] - box.lo[k]) / resolution[static_cast<std::size_t>(k)];
        return v;
    }

    [[nodiscard]] Eigen::Index node_count() const {
        Eigen::Index n = 1;
        for (int r : resolution) n *= r;
        return n;
    }

    [[nodiscard]] PointSet nodes() const {
        const int d = box.dim();
        PointSet pts(d, node_count());
        for (Eigen::Index idx = 0; idx < pts.cols(); ++idx) {
            Eigen::Index rem = idx;
            for (int k = d - 1; k >= 0; --k) {
                const int r = resolution[static_cast<std::size_t>(k)];
                const auto c = rem % r;
                rem /= r;
                pts(k, idx) = box.lo[k] + (static_cast<double>(c) + 0.5) * (box.hi[k] - box.lo[k]) / r;
            }
        }
        return pts;
    }

    [[nodiscard]] double mass() const { return values.sum() * cell_volume(); }
};

/// Method (a): y-marginal density of each plan on a grid, with the integral
/// over mu_i replaced by an average over `n_x_samples` draws. Per-plan grids
/// are normalized, then weight-averaged.
inline DensityGrid marginal_grid(std::span<const TransportPlanHandle> plans, const Vector& weights, Eigen::Index n_x_samples,
                                 const GridSpec& spec, Rng& rng) {
    if (plans.empty()) throw InvalidArgument("marginal_grid: no plans");
    validate_weights(weights, plans.size());
    if (n_x_samples < 1) throw InvalidArgument("marginal_grid: n_x_samples must be at least 1");
    spec.box.validate();
    if (static_cast<int>(spec.resolution.size()) != spec.box.dim()) throw DimensionError("marginal_grid: resolution per axis required");
    for (int r : spec.resolution) {
        if (r < 1) throw InvalidArgument("marginal_grid: resolution must be positive");
    }
    const Box& sup = plans.front().support->box;
    if (!sup.contains(spec.box, 1e-9 * std::max(1.0, sup.diagonal()))) throw InvalidArgument("marginal_grid: grid box must lie inside the support box");

    DensityGrid out{spec.box, spec.resolution, Vector::Zero(0), false, false};
    const PointSet nodes = out.nodes();
    out.values = Vector::Zero(nodes.cols());
    const double cell = out.cell_volume();
    constexpr Eigen::Index kChunk = 512;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& plan = plans[i];
        const PointSet X = plan.source->sample(n_x_samples, rng);
        const Vector fx = plan.f->values(X);
        Vector grid = Vector::Zero(nodes.cols());
        for (Eigen::Index start = 0; start < nodes.cols(); start += kChunk) {
            const auto len = std::min(kChunk, nodes.cols() - start);
            const Matrix Y = nodes.middleCols(start, len);
            const Matrix H = plan.density_from_values(fx, plan.g(Y), X, Y);
            grid.segment(start, len) = H.colwise().mean().transpose();
        }
        // H is a density against eta; only a uniform eta can be dropped
        if (!plan.support->is_uniform()) {
            for (Eigen::Index k = 0; k < nodes.cols(); ++k) {
                const auto ly = plan.support->log_density(nodes.col(k));
                if (!ly) throw DensityUnavailable("grid recovery needs a support measure with a density");
                grid[k] *= std::exp(*ly);
            }
        }
        if (spec.normalize_each) {
            const double m = grid.sum() * cell;
            if (!(m > 0.0) || !std::isfinite(m)) {
                out.degenerate = true;
            } else {
                grid /= m;
            }
        }
        out.values += weights[static_cast<Eigen::Index>(i)] * grid;
    }
    if (!spec.normalize_each) {
        const double m = out.values.sum() * cell;
        if (!(m > 0.0) || !std::isfinite(m)) {
            out.degenerate = true;
        } else {
            out.values /= m;
        }
    }
    out.normalized = !out.degenerate;
    return out;
}

/// Draws from the piecewise-constant density of a normalized grid: a cell by
/// its mass, then a uniform point inside it.
inline PointSet sample_grid(const DensityGrid& grid, Eigen::Index n, Rng& rng) {
    if (grid.degenerate || grid.values.size() == 0) throw InvalidArgument("sample_grid: grid carries no mass");
    if (grid.values.minCoeff() < 0.0) throw InvalidArgument("sample_grid: negative grid value");
    std::discrete_distribution<Eigen::Index> cell(grid.values.data(), grid.values.data() + grid.values.size());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int d = grid.box.dim();
    PointSet out(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::Index rem = cell(rng);
        for (int k = d - 1; k >= 0; --k) {
            const int r = grid.resolution[static_cast<std::size_t>(k)];
            const auto c = rem % r;
            rem /= r;
            out(k, j) = grid.box.lo[k] + (static_cast<double>(c) + unit(rng)) * (grid.box.hi[k] - grid.box.lo[k]) / r;
        }
    }
    return out;
}

struct McmcOptions {
    Eigen::Index samples = 100000;
    double proposal_sigma = 0.1;
    long burn_in = 10000;
    long thin = 10;
};

struct McmcChain {
    PointSet states;
    double acceptance_rate = 0.0;
    std::vector<std::string> warnings;
};

inline constexpr double kMinAcceptance = 0.05;
inline constexpr double kMaxAcceptance = 0.95;

/// Random-walk Metropolis-Hastings with an isotropic Gaussian proposal.
inline McmcChain metropolis_hastings(const std::function<double(const Vector&)>& log_target, Vector start, const McmcOptions& opt,
                                     Rng& rng) {
    if (opt.samples < 1 || opt.thin < 1 || opt.burn_in < 0) throw InvalidArgument("mcmc: invalid sample/thin/burn-in counts");
    if (!(opt.proposal_sigma >= 0.0)) throw InvalidArgument("mcmc: proposal sigma must be nonnegative");
    double current = log_target(start);
    if (!std::isfinite(current)) throw InvalidArgument("mcmc: start point has zero target density");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    McmcChain chain;
    chain.states.resize(start.size(), opt.samples);
    const long total = opt.burn_in + opt.thin * static_cast<long>(opt.samples);
    long accepted = 0;
    Vector proposal(start.size());
    for (long it = 0; it < total; ++it) {
        for (Eigen::Index k = 0; k < proposal.size(); ++k) proposal[k] = start[k] + opt.proposal_sigma * normal(rng);
        const double cand = log_target(proposal);
        if (std::isfinite(cand) && std::log(unit(rng)) < cand - current) {
            start = proposal;
            current = cand;
            ++accepted;
        }
        if (it >= opt.burn_in && (it - opt.burn_in + 1) % opt.thin == 0) chain.states.col((it - opt.burn_in) / opt.thin) = start;
    }
    chain.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
    if (chain.acceptance_rate < kMinAcceptance) {
        chain.warnings.push_back("mcmc acceptance rate " + std::to_string(chain.acceptance_rate) + " is below 0.05; decrease proposal_sigma");
    } else if (chain.acceptance_rate > kMaxAcceptance) {
        chain.warnings.push_back("mcmc acceptance rate " + std::to_string(chain.acceptance_rate) + " is above 0.95; increase proposal_sigma");
    }
    return chain;
}

struct McmcSampleSet {
    BarycenterSampleSet samples;
    double acceptance_rate = 0.0;
    std::vector<std::string> warnings;
};

/// Method (b): chain on (x, y) targeting H(x, y) mu_i(x) eta(y); returns the y parts.
inline McmcSampleSet mcmc_sample(const TransportPlanHandle& plan, const McmcOptions& opt, Rng& rng) {
    if (!plan.source->has_density()) {
        throw DensityUnavailable("mcmc recovery needs an input density; use bproj, gradmap or mongenet for empirical inputs");
    }
    const int d = plan.dim();
    auto log_target = [&](const Vector& z) {
        const Vector x = z.head(d);
        const Vector y = z.tail(d);
        const double ly = plan.support->log_density(y).value_or(-std::numeric_limits<double>::infinity());
        if (!std::isfinite(ly)) return ly;
        const double lx = *plan.source->log_density(x);
        if (!std::isfinite(lx)) return lx;
        const double h = plan.density(Eigen::Ref<const Vector>(x), Eigen::Ref<const Vector>(y));
        return h > 0.0 ? std::log(h) + lx + ly : -std::numeric_limits<double>::infinity();
    };
    Vector start(2 * d);
    bool found = false;
    for (int attempt = 0; attempt < 100 && !found; ++attempt) {
        const PointSet x0 = plan.source->sample(1, rng);
        const PointSet cand = plan.support->sample(1000, rng);
        const Matrix H = plan.density(x0, cand);
        Eigen::Index best = 0;
        if (H.row(0).maxCoeff(&best) > 0.0) {
            start << x0.col(0), cand.col(best);
            found = std::isfinite(log_target(start));
        }
    }
    if (!found) throw InvalidArgument("mcmc: could not find a starting point with positive plan density");
    McmcChain chain = metropolis_hastings(log_target, start, opt, rng);
    McmcSampleSet out;
    out.samples.points = chain.states.bottomRows(d);
    out.samples.method = RecoveryMethod::mcmc;
    out.acceptance_rate = chain.acceptance_rate;
    out.warnings = std::move(chain.warnings);
    return out;
}

inline double default_proposal_sigma(const Box& box) { return 0.05 * box.diagonal(); }

/// Conditional masses below this are treated as vanishing.
inline constexpr double kMinConditionalMass = 1e-300;

/// Method (c): E[Y | x] under the plan, self-normalized over `n_y_samples`
/// draws from eta. nullopt when the conditional mass vanishes.
inline std::optional<Vector> barycentric_projection(const TransportPlanHandle& plan, const Eigen::Ref<const Vector>& x,
                                                    Eigen::Index n_y_samples, Rng& rng) {
    if (n_y_samples < 1) throw InvalidArgument("barycentric_projection: n_y_samples must be at least 1");
    require_dim(x.size(), plan.dim(), "barycentric_projection");
    const PointSet Y = plan.support->sample(n_y_samples, rng);
    const Vector h = plan.density(Matrix(x), Y).row(0).transpose();
    const double mass = h.sum();
    if (!(mass >= kMinConditionalMass)) return std::nullopt;
    return Vector(Y * h / mass);
}

struct ProjectionBatch {
    PointSet maps;  // NaN columns where the mass vanished
    Eigen::Index skipped = 0;
};

/// Batched method (c); one shared set of eta draws serves the whole batch.
inline ProjectionBatch barycentric_projection_batch(const TransportPlanHandle& plan, const PointSet& X, Eigen::Index n_y_samples,
                                                    Rng& rng) {
    if (n_y_samples < 1) throw InvalidArgument("barycentric_projection: n_y_samples must be at least 1");
    require_dim(X.rows(), plan.dim(), "barycentric_projection");
    const PointSet Y = plan.support->sample(n_y_samples, rng);
    const Vector gy = plan.g(Y);
    ProjectionBatch out;
    out.maps.resize(X.rows(), X.cols());
    constexpr Eigen::Index kChunk = 256;
    for (Eigen::Index start = 0; start < X.cols(); start += kChunk) {
        const auto len = std::min(kChunk, X.cols() - start);
        const Matrix Xc = X.middleCols(start, len);
        const Matrix H = plan.density_from_values(plan.f->values(Xc), gy, Xc, Y);
        const Vector mass = H.rowwise().sum();
        const Matrix num = Y * H.transpose();
        for (Eigen::Index a = 0; a < len; ++a) {
            if (mass[a] >= kMinConditionalMass) {
                out.maps.col(start + a) = num.col(a) / mass[a];
            } else {
                out.maps.col(start + a).setConstant(std::numeric_limits<double>::quiet_NaN());
                ++out.skipped;
            }
        }
    }
    return out;
}

/// Method (d): x - grad f_i(x) / 2 for every column.
inline PointSet gradient_map(const Potential& f, const PointSet& X) { return X - 0.5 * f.input_gradients(X); }

inline PointSet gradient_map(const TransportPlanHandle& plan, const PointSet& X) { return gradient_map(*plan.f, X); }

struct MongeFitConfig {
    MlpSpec net{};
    long steps = 5000;
    Eigen::Index batch_x = 256;
    Eigen::Index batch_y = 1024;
    AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
    std::uint64_t seed = 0;
};

/// Method (e): minimizes E_{X~mu_i, Y~eta}[ |T(X) - Y|^2 H(X, Y) ] over an
/// MLP T, using all batch_x * batch_y pairs of each step.
inline Potential fit_monge_net(const TransportPlanHandle& plan, const MongeFitConfig& cfg, Rng& rng) {
    const int d = plan.dim();
    Potential net = Potential::init(cfg.net, d, d, cfg.seed);
    if (cfg.batch_x < 1 || cfg.batch_y < 1) throw InvalidArgument("fit_monge_net: batch sizes must be positive");
    AdamState adam(net.parameter_count());
    const double norm = 1.0 / (static_cast<double>(cfg.batch_x) * static_cast<double>(cfg.batch_y));
    Potential::Cache cache;
    for (long s = 0; s < cfg.steps; ++s) {
        const PointSet X = plan.source->sample(cfg.batch_x, rng);
        const PointSet Y = plan.support->sample(cfg.batch_y, rng);
        const Matrix H = plan.density(X, Y);
        const Matrix T = net.forward(X, cache);
        const Vector row_mass = H.rowwise().sum();
        const Matrix YH = Y * H.transpose();  // d x batch_x
        const double loss =
            norm * ((T.colwise().squaredNorm().transpose().array() * row_mass.array()).sum() - 2.0 * (T.array() * YH.array()).sum() +
                    (Y.colwise().squaredNorm() * H.transpose()).sum());
        if (!std::isfinite(loss)) throw DivergenceError("fit_monge_net: non-finite loss at step " + std::to_string(s));
        Matrix up = T;
        up.array().rowwise() *= row_mass.transpose().array();
        up = 2.0 * norm * (up - YH);
        Vector grad = Vector::Zero(net.parameter_count());
        net.backward(cache, up, &grad, nullptr);
        adam.apply(net.parameters(), grad, cfg.adam, false);
    }
    return net;
}

using TransportMap = std::function<PointSet(const PointSet&)>;

/// Shifts points so that `mean_estimate` moves to `target`.
inline PointSet recenter(const PointSet& points, const Vector& mean_estimate, const Vector& target) {
    return points.colwise() + (target - mean_estimate);
}

/// Weighted mixture of re-centered pushforwards: round(w_i n_total) draws from
/// mu_i mapped by T_i, shifted to zero mean (estimated on an independent
/// batch of `mean_batch` draws), then translated to the barycenter mean.
inline BarycenterSampleSet pushforward_barycenter(std::span<const TransportMap> maps, std::span<const MeasureSource> sources,
                                                  const CenteringRecord& centering, Eigen::Index n_total, RecoveryMethod method,
                                                  Rng& rng, Eigen::Index mean_batch = 20000) {
    if (maps.size() != sources.size()) throw InvalidArgument("pushforward_barycenter: one map per source required");
    validate_weights(centering.weights, sources.size());
    if (n_total < 1) throw InvalidArgument("pushforward_barycenter: n_total must be at least 1");
    const int d = sources.front().dim();
    require_dim(centering.barycenter_mean.size(), d, "pushforward_barycenter mean");
    BarycenterSampleSet out;
    out.method = method;
    std::vector<PointSet> parts;
    Eigen::Index total = 0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto count = static_cast<Eigen::Index>(std::llround(centering.weights[static_cast<Eigen::Index>(i)] * static_cast<double>(n_total)));
        if (count == 0) continue;
        const PointSet mapped = maps[i](sources[i].sample(count, rng));
        const PointSet probe = maps[i](sources[i].sample(mean_batch, rng));
        Vector probe_mean = Vector::Zero(d);
        Eigen::Index finite = 0;
        for (Eigen::Index j = 0; j < probe.cols(); ++j) {
            if (probe.col(j).allFinite()) {
                probe_mean += probe.col(j);
                ++finite;
            }
        }
        if (finite == 0) throw InvalidArgument("pushforward_barycenter: map " + std::to_string(i) + " is undefined on every probe point");
        probe_mean /= static_cast<double>(finite);
        PointSet kept(d, mapped.cols());
        Eigen::Index k = 0;
        for (Eigen::Index j = 0; j < mapped.cols(); ++j) {
            if (mapped.col(j).allFinite()) kept.col(k++) = mapped.col(j);
        }
        out.dropped += mapped.cols() - k;
        kept.conservativeResize(d, k);
        parts.push_back(recenter(kept, probe_mean, centering.barycenter_mean));
        out.source_index.insert(out.source_index.end(), static_cast<std::size_t>(k), static_cast<int>(i));
        total += k;
    }
    out.points.resize(d, total);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        out.points.middleCols(off, p.cols()) = p;
        off += p.cols();
    }
    return out;
}

/// Weighted union of per-plan sample sets (used for grid-free methods that
/// sample each plan directly).
inline BarycenterSampleSet concatenate(std::span<const BarycenterSampleSet> parts, RecoveryMethod method) {
    BarycenterSampleSet out;
    out.method = method;
    Eigen::Index total = 0;
    for (const auto& p : parts) total += p.points.cols();
    if (parts.empty()) return out;
    out.points.resize(parts.front().points.rows(), total);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out.points.middleCols(off, parts[i].points.cols()) = parts[i].points;
        off += parts[i].points.cols();
        out.source_index.insert(out.source_index.end(), static_cast<std::size_t>(parts[i].points.cols()), static_cast<int>(i));
        out.dropped += parts[i].dropped;
    }
    return out;
}

/// Columns x0..x{d-1}, method, source; `header` lines are written as '#' comments.
inline void write_samples_csv(std::ostream& os, const BarycenterSampleSet& s, const std::vector<std::string>& header = {}) {
    for (const auto& h : header) os << "# " << h << '\n';
    const auto d = s.points.rows();
    for (Eigen::Index k = 0; k < d; ++k) os << 'x' << k << ',';
    os << "method,source\n";
    os << std::setprecision(17);
    const std::string tag = to_string(s.method);
    for (Eigen::Index j = 0; j < s.points.cols(); ++j) {
        for (Eigen::Index k = 0; k < d; ++k) os << s.points(k, j) << ',';
        os << tag << ',' << (static_cast<std::size_t>(j) < s.source_index.size() ? s.source_index[static_cast<std::size_t>(j)] : -1) << '\n';
    }
}

/// Header comments carry the box and resolution; then one line per slice of
/// the last axis.
inline void write_grid_csv(std::ostream& os, const DensityGrid& g, const std::vector<std::string>& header = {}) {
    for (const auto& h : header) os << "# " << h << '\n';
    os << std::setprecision(17);
    os << "# lo=";
    for (int k = 0; k < g.box.dim(); ++k) os << (k ? " " : "") << g.box.lo[k];
    os << "\n# hi=";
    for (int k = 0; k < g.box.dim(); ++k) os << (k ? " " : "") << g.box.hi[k];
    os << "\n# resolution=";
    for (std::size_t k = 0; k < g.resolution.size(); ++k) os << (k ? " " : "") << g.resolution[k];
    os << "\n# normalized=" << (g.normalized ? 1 : 0) << " degenerate=" << (g.degenerate ? 1 : 0) << '\n';
    const int last = g.resolution.back();
    for (Eigen::Index idx = 0; idx < g.values.size(); ++idx) {
        os << g.values[idx] << ((idx + 1) % last == 0 ? '\n' : ',');
    }
}

}  // namespace cwb
