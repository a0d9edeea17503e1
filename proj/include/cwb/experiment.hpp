#pragma once

// Config-driven experiment pipeline: centering, box estimation, solve,
// recovery and evaluation, with JSON configs, checkpoints and CSV artifacts.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cwb/baselines.hpp"
#include "cwb/dual_solver.hpp"
#include "cwb/evaluation.hpp"
#include "cwb/measures.hpp"
#include "cwb/recovery.hpp"

namespace cwb {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// config reading

namespace detail {

/// A JSON object whose keys must all be consumed; leftovers are typos.
class Section {
public:
    Section(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    [[nodiscard]] bool has(const std::string& key) const { return j_->contains(key); }
    [[nodiscard]] const std::string& path() const { return path_; }

    template <class T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!j_->contains(key)) return fallback;
        return convert<T>(key);
    }

    template <class T>
    T require(const std::string& key) {
        used_.insert(key);
        if (!j_->contains(key)) throw ConfigError(path_ + ": missing key '" + key + "'");
        return convert<T>(key);
    }

    const json& raw(const std::string& key) {
        used_.insert(key);
        if (!j_->contains(key)) throw ConfigError(path_ + ": missing key '" + key + "'");
        return j_->at(key);
    }

    Section sub(const std::string& key) { return Section(raw(key), path_ + "." + key); }

    void finish() const {
        for (auto it = j_->begin(); it != j_->end(); ++it) {
            if (!used_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
        }
    }

private:
    template <class T>
    T convert(const std::string& key) const {
        try {
            return j_->at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    const json* j_;
    std::string path_;
    std::set<std::string> used_;
};

inline Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

inline Matrix to_matrix(const std::vector<std::vector<double>>& rows, const std::string& what) {
    if (rows.empty()) throw ConfigError(what + ": empty matrix");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.front().size()) throw ConfigError(what + ": ragged matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

inline std::vector<double> from_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline std::vector<std::vector<double>> from_matrix(const Matrix& m) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = from_vector(m.row(r).transpose());
    return out;
}

}  // namespace detail

/// Appendix-style random Gaussian inputs: means uniform in [-mean_range,
/// mean_range]^d, covariance A A^T with A entries uniform in
/// [-factor_range, factor_range], redrawn until cond(A) lies in the range.
struct RandomGaussianSpec {
    int count = 5;
    double mean_range = 1.0;
    double factor_range = 0.3;
    double min_condition = 2.0;
    double max_condition = 80.0;
};

struct ProblemConfig {
    int dimension = 0;
    std::vector<json> sources;  // validated at load, built per trial
    std::optional<RandomGaussianSpec> random_gaussians;
    std::optional<Vector> weights;
    bool centering = true;
    std::optional<Box> support_box;
    Eigen::Index support_probe = 10000;
    double support_margin = 0.1;
    double support_floor = 1.0;
};

struct RecoveryConfig {
    RecoveryMethod method = RecoveryMethod::gradmap;
    Eigen::Index samples = 100000;
    Eigen::Index mean_batch = 20000;
    Eigen::Index projection_y_samples = 4096;
    McmcOptions mcmc{};
    std::optional<double> mcmc_proposal_sigma;
    MongeFitConfig monge{};
    std::vector<int> grid_resolution;
    Eigen::Index grid_x_samples = 1000;
    bool grid_normalize_each = true;
};

enum class OracleKind { automatic, none, gaussian_fixed_point, pooled_gaussian };

inline OracleKind oracle_from_string(const std::string& s) {
    if (s == "auto") return OracleKind::automatic;
    if (s == "none") return OracleKind::none;
    if (s == "gaussian_fixed_point") return OracleKind::gaussian_fixed_point;
    if (s == "pooled_gaussian") return OracleKind::pooled_gaussian;
    throw ConfigError("unknown oracle '" + s + "' (expected auto, none, gaussian_fixed_point or pooled_gaussian)");
}

struct EvaluationConfig {
    OracleKind oracle = OracleKind::automatic;
    int trials = 1;
    std::vector<Eigen::Index> w2_sizes;
    int w2_trials = 5;
    std::optional<json> reference;  // source spec for W2 reference draws
    Eigen::Index reference_samples = 20000;
};

struct ExperimentConfig {
    ProblemConfig problem;
    SolverConfig solver;  // weights and seed are filled per trial
    long checkpoint_interval = 0;
    RecoveryConfig recovery;
    EvaluationConfig evaluation;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
    std::filesystem::path base_dir = ".";
    json raw;
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline void check_source_spec(const json& spec, const std::string& path, int dim, const std::filesystem::path& base);

inline void check_gaussian_fields(Section& s, int dim) {
    const auto mean = s.require<std::vector<double>>("mean");
    const auto cov = s.require<std::vector<std::vector<double>>>("covariance");
    if (static_cast<int>(mean.size()) != dim) throw ConfigError(s.path() + ": mean has the wrong dimension");
    const Matrix c = to_matrix(cov, s.path() + ".covariance");
    if (c.rows() != dim || c.cols() != dim) throw ConfigError(s.path() + ": covariance has the wrong shape");
}

inline void check_source_spec(const json& spec, const std::string& path, int dim, const std::filesystem::path& base) {
    Section s(spec, path);
    const auto type = s.require<std::string>("type");
    if (type == "gaussian") {
        check_gaussian_fields(s, dim);
    } else if (type == "gaussian_mixture") {
        const auto& comps = s.raw("components");
        if (!comps.is_array() || comps.empty()) throw ConfigError(path + ".components: expected a non-empty array");
        for (std::size_t k = 0; k < comps.size(); ++k) {
            Section c(comps[k], path + ".components[" + std::to_string(k) + "]");
            check_gaussian_fields(c, dim);
            c.finish();
        }
        const auto w = s.get<std::vector<double>>("weights", {});
        if (!w.empty() && w.size() != comps.size()) {
            throw ConfigError(path + ".weights: one weight per component required");
        }
    } else if (type == "uniform_box") {
        const auto lo = s.require<std::vector<double>>("lo");
        const auto hi = s.require<std::vector<double>>("hi");
        if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim) throw ConfigError(path + ": box has the wrong dimension");
    } else if (type == "annulus") {
        s.require<std::vector<double>>("center");
        s.require<double>("inner");
        s.require<double>("outer");
        if (dim != 2) throw ConfigError(path + ": annulus needs dimension 2");
    } else if (type == "ellipse") {
        s.require<std::vector<double>>("center");
        s.require<double>("semi_a");
        s.require<double>("semi_b");
        s.get<double>("angle", 0.0);
        if (dim != 2) throw ConfigError(path + ": ellipse needs dimension 2");
    } else if (type == "raster") {
        s.require<std::vector<double>>("lo");
        s.require<std::vector<double>>("hi");
        if (dim != 2) throw ConfigError(path + ": raster needs dimension 2");
        const bool inline_rows = s.has("intensity");
        const bool file = s.has("path");
        if (inline_rows == file) throw ConfigError(path + ": raster needs exactly one of 'intensity' or 'path'");
        if (inline_rows) s.require<std::vector<std::vector<double>>>("intensity");
        if (file) {
            const auto p = resolve(base, s.require<std::string>("path"));
            if (!std::filesystem::exists(p)) throw ConfigError(path + ".path: file not found: " + p.string());
        }
    } else if (type == "csv") {
        const auto p = resolve(base, s.require<std::string>("path"));
        if (!std::filesystem::exists(p)) throw ConfigError(path + ".path: file not found: " + p.string());
    } else if (type == "empirical") {
        const auto pts = s.require<std::vector<std::vector<double>>>("points");
        for (const auto& row : pts) {
            if (static_cast<int>(row.size()) != dim) throw ConfigError(path + ".points: point with the wrong dimension");
        }
        if (pts.empty()) throw ConfigError(path + ".points: empty");
    } else if (type == "draws") {
        if (s.require<long>("count") < 1) throw ConfigError(path + ".count: must be positive");
        check_source_spec(s.raw("source"), path + ".source", dim, base);
    } else {
        throw ConfigError(path + ": unknown source type '" + type + "'");
    }
    s.finish();
}

}  // namespace detail

/// FNV-1a over the canonical (key-sorted) dump of the config, excluding
/// `seed` and `output_dir` so that the hash names the experiment itself.
inline std::string config_hash(const json& raw) {
    json j = raw;
    j.erase("seed");
    j.erase("output_dir");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

/// Hash of the sections that determine the trained potentials; a checkpoint
/// can be reused by any config that agrees on it.
inline std::string solve_hash(const json& raw) {
    json j;
    j["problem"] = raw.value("problem", json());
    j["solver"] = raw.value("solver", json());
    return config_hash(j);
}

inline ExperimentConfig parse_experiment_config(const json& root, const std::filesystem::path& base_dir = ".") {
    using detail::Section;
    ExperimentConfig cfg;
    cfg.raw = root;
    cfg.base_dir = base_dir;
    Section top(root, "config");
    cfg.seed = top.get<std::uint64_t>("seed", 0);
    cfg.output_dir = top.get<std::string>("output_dir", "out");

    {
        Section p = top.sub("problem");
        auto& pc = cfg.problem;
        pc.dimension = p.require<int>("dimension");
        if (pc.dimension < 1) throw ConfigError("config.problem.dimension: must be positive");
        if (p.has("sources")) {
            const auto& arr = p.raw("sources");
            if (!arr.is_array()) throw ConfigError("config.problem.sources: expected an array");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                detail::check_source_spec(arr[i], "config.problem.sources[" + std::to_string(i) + "]", pc.dimension, base_dir);
                pc.sources.push_back(arr[i]);
            }
        }
        if (p.has("random_gaussians")) {
            Section r = p.sub("random_gaussians");
            RandomGaussianSpec spec;
            spec.count = r.get<int>("count", spec.count);
            spec.mean_range = r.get<double>("mean_range", spec.mean_range);
            spec.factor_range = r.get<double>("factor_range", spec.factor_range);
            const auto cond = r.get<std::vector<double>>("condition", {spec.min_condition, spec.max_condition});
            r.finish();
            if (cond.size() != 2 || !(cond[0] >= 1.0 && cond[1] >= cond[0])) {
                throw ConfigError("config.problem.random_gaussians.condition: expected [min, max] with 1 <= min <= max");
            }
            spec.min_condition = cond[0];
            spec.max_condition = cond[1];
            if (spec.count < 1 || !(spec.mean_range >= 0.0) || !(spec.factor_range > 0.0)) {
                throw ConfigError("config.problem.random_gaussians: count, mean_range and factor_range must be positive");
            }
            pc.random_gaussians = spec;
        }
        if (pc.sources.empty() == !pc.random_gaussians.has_value()) {
            throw ConfigError("config.problem: give exactly one of 'sources' or 'random_gaussians'");
        }
        const std::size_t n = pc.random_gaussians ? static_cast<std::size_t>(pc.random_gaussians->count) : pc.sources.size();
        if (p.has("weights")) {
            Vector w = detail::to_vector(p.require<std::vector<double>>("weights"));
            if (w.size() != static_cast<Eigen::Index>(n)) throw ConfigError("config.problem.weights: one weight per source required");
            if ((w.array() < 0.0).any() || !(w.sum() > 0.0)) throw ConfigError("config.problem.weights: must be nonnegative with a positive sum");
            pc.weights = w / w.sum();
        }
        pc.centering = p.get<bool>("centering", true);
        if (p.has("support")) {
            Section s = p.sub("support");
            if (s.has("lo") || s.has("hi")) {
                Box b(detail::to_vector(s.require<std::vector<double>>("lo")), detail::to_vector(s.require<std::vector<double>>("hi")));
                try {
                    b.validate();
                } catch (const Error& e) {
                    throw ConfigError(std::string("config.problem.support: ") + e.what());
                }
                if (b.dim() != pc.dimension) throw ConfigError("config.problem.support: box has the wrong dimension");
                pc.support_box = b;
            }
            pc.support_probe = s.get<Eigen::Index>("probe", pc.support_probe);
            pc.support_margin = s.get<double>("margin", pc.support_margin);
            pc.support_floor = s.get<double>("floor_width", pc.support_floor);
            s.finish();
            if (pc.support_probe < 1 || pc.support_margin < 0.0 || !(pc.support_floor > 0.0)) {
                throw ConfigError("config.problem.support: probe, margin and floor_width out of range");
            }
        }
        p.finish();
    }

    {
        Section s = top.sub("solver");
        auto& sc = cfg.solver;
        try {
            sc.regularizer.family = family_from_string(s.get<std::string>("family", "quadratic"));
        } catch (const Error& e) {
            throw ConfigError(std::string("config.solver.family: ") + e.what());
        }
        sc.regularizer.epsilon = s.get<double>("epsilon", sc.regularizer.epsilon);
        sc.regularizer.scale_by_diagonal = s.get<bool>("scale_by_diagonal", true);
        sc.batch_size = s.get<Eigen::Index>("batch_size", sc.batch_size);
        sc.steps = s.get<long>("steps", sc.steps);
        sc.adam.learning_rate = s.get<double>("learning_rate", sc.adam.learning_rate);
        sc.adam.beta1 = s.get<double>("beta1", sc.adam.beta1);
        sc.adam.beta2 = s.get<double>("beta2", sc.adam.beta2);
        sc.log_interval = s.get<long>("log_interval", sc.log_interval);
        sc.ema_decay = s.get<double>("ema_decay", sc.ema_decay);
        sc.shared_y = s.get<bool>("shared_y", sc.shared_y);
        sc.param_average = s.get<double>("param_average", sc.param_average);
        cfg.checkpoint_interval = s.get<long>("checkpoint_interval", 0);
        if (s.has("potential")) {
            Section pot = s.sub("potential");
            const auto kind = pot.require<std::string>("kind");
            if (kind == "mlp") {
                MlpSpec m;
                m.hidden = pot.get<std::vector<int>>("hidden", m.hidden);
                for (int h : m.hidden) {
                    if (h < 1) throw ConfigError("config.solver.potential.hidden: widths must be positive");
                }
                sc.f_spec = m;
            } else if (kind == "rff") {
                RffSpec r;
                r.features = pot.get<int>("features", r.features);
                r.scale = pot.get<double>("scale", r.scale);
                if (r.features < 1 || !(r.scale > 0.0)) throw ConfigError("config.solver.potential: features and scale must be positive");
                sc.f_spec = r;
            } else {
                throw ConfigError("config.solver.potential.kind: expected 'mlp' or 'rff'");
            }
            pot.finish();
            sc.g_spec = sc.f_spec;
        }
        s.finish();
        try {
            sc.regularizer.validate();
        } catch (const Error& e) {
            throw ConfigError(std::string("config.solver: ") + e.what());
        }
        if (sc.batch_size < 1 || sc.steps < 0 || !(sc.adam.learning_rate > 0.0) || sc.log_interval < 1 || cfg.checkpoint_interval < 0) {
            throw ConfigError("config.solver: batch_size, steps, learning_rate, log_interval or checkpoint_interval out of range");
        }
        if (!(sc.ema_decay >= 0.0 && sc.ema_decay < 1.0)) throw ConfigError("config.solver.ema_decay: must lie in [0, 1)");
        if (!(sc.param_average >= 0.0 && sc.param_average < 1.0)) throw ConfigError("config.solver.param_average: must lie in [0, 1)");
    }

    if (top.has("recovery")) {
        Section r = top.sub("recovery");
        auto& rc = cfg.recovery;
        try {
            rc.method = recovery_method_from_string(r.get<std::string>("method", "gradmap"));
        } catch (const Error& e) {
            throw ConfigError(std::string("config.recovery.method: ") + e.what());
        }
        rc.samples = r.get<Eigen::Index>("samples", rc.samples);
        rc.mean_batch = r.get<Eigen::Index>("mean_batch", rc.mean_batch);
        rc.projection_y_samples = r.get<Eigen::Index>("projection_y_samples", rc.projection_y_samples);
        if (r.has("mcmc")) {
            Section m = r.sub("mcmc");
            rc.mcmc.burn_in = m.get<long>("burn_in", rc.mcmc.burn_in);
            rc.mcmc.thin = m.get<long>("thin", rc.mcmc.thin);
            if (m.has("proposal_sigma")) rc.mcmc_proposal_sigma = m.require<double>("proposal_sigma");
            m.finish();
            if (rc.mcmc.burn_in < 0 || rc.mcmc.thin < 1 || (rc.mcmc_proposal_sigma && !(*rc.mcmc_proposal_sigma > 0.0))) {
                throw ConfigError("config.recovery.mcmc: burn_in, thin or proposal_sigma out of range");
            }
        }
        if (r.has("mongenet")) {
            Section m = r.sub("mongenet");
            rc.monge.net.hidden = m.get<std::vector<int>>("hidden", rc.monge.net.hidden);
            rc.monge.steps = m.get<long>("steps", rc.monge.steps);
            rc.monge.batch_x = m.get<Eigen::Index>("batch_x", rc.monge.batch_x);
            rc.monge.batch_y = m.get<Eigen::Index>("batch_y", rc.monge.batch_y);
            rc.monge.adam.learning_rate = m.get<double>("learning_rate", rc.monge.adam.learning_rate);
            m.finish();
            if (rc.monge.steps < 0 || rc.monge.batch_x < 1 || rc.monge.batch_y < 1 || !(rc.monge.adam.learning_rate > 0.0)) {
                throw ConfigError("config.recovery.mongenet: steps, batches or learning_rate out of range");
            }
        }
        if (r.has("grid")) {
            Section g = r.sub("grid");
            rc.grid_resolution = g.require<std::vector<int>>("resolution");
            rc.grid_x_samples = g.get<Eigen::Index>("x_samples", rc.grid_x_samples);
            rc.grid_normalize_each = g.get<bool>("normalize_each", rc.grid_normalize_each);
            g.finish();
            if (static_cast<int>(rc.grid_resolution.size()) != cfg.problem.dimension) {
                throw ConfigError("config.recovery.grid.resolution: one entry per dimension required");
            }
            for (int v : rc.grid_resolution) {
                if (v < 1) throw ConfigError("config.recovery.grid.resolution: entries must be positive");
            }
            if (rc.grid_x_samples < 1) throw ConfigError("config.recovery.grid.x_samples: must be positive");
        }
        r.finish();
        if (rc.samples < 1 || rc.mean_batch < 1 || rc.projection_y_samples < 1) {
            throw ConfigError("config.recovery: samples, mean_batch and projection_y_samples must be positive");
        }
        if (rc.method == RecoveryMethod::grid && rc.grid_resolution.empty()) {
            rc.grid_resolution.assign(static_cast<std::size_t>(cfg.problem.dimension), cfg.problem.dimension <= 2 ? 100 : 10);
        }
    }

    if (top.has("evaluation")) {
        Section e = top.sub("evaluation");
        auto& ec = cfg.evaluation;
        ec.oracle = oracle_from_string(e.get<std::string>("oracle", "auto"));
        ec.trials = e.get<int>("trials", ec.trials);
        ec.w2_sizes = e.get<std::vector<Eigen::Index>>("w2_sizes", {});
        ec.w2_trials = e.get<int>("w2_trials", ec.w2_trials);
        ec.reference_samples = e.get<Eigen::Index>("reference_samples", ec.reference_samples);
        if (e.has("reference")) {
            detail::check_source_spec(e.raw("reference"), "config.evaluation.reference", cfg.problem.dimension, base_dir);
            ec.reference = e.raw("reference");
        }
        e.finish();
        if (ec.trials < 1 || ec.w2_trials < 1 || ec.reference_samples < 1) {
            throw ConfigError("config.evaluation: trials, w2_trials and reference_samples must be positive");
        }
        Eigen::Index prev = 0;
        for (auto m : ec.w2_sizes) {
            if (m < prev || m < 1 || m > kAssignmentCap) {
                throw ConfigError("config.evaluation.w2_sizes: must be positive, nondecreasing and at most " + std::to_string(kAssignmentCap));
            }
            prev = m;
        }
        if (!ec.w2_sizes.empty() && ec.w2_sizes.back() > ec.reference_samples) {
            throw ConfigError("config.evaluation.w2_sizes: largest size exceeds reference_samples");
        }
        if (!ec.w2_sizes.empty() && ec.w2_sizes.back() > cfg.recovery.samples) {
            throw ConfigError("config.evaluation.w2_sizes: largest size exceeds recovery.samples");
        }
    }
    top.finish();
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json root;
    try {
        root = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_experiment_config(root, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// problem instances

/// Per-trial RNG streams, derived from the trial seed so that staged commands
/// reproduce exactly what the end-to-end run does.
struct TrialStreams {
    static constexpr std::uint64_t problem = 0x2545f4914f6cdd1dULL;
    static constexpr std::uint64_t support = 0x5851f42d4c957f2dULL;
    static constexpr std::uint64_t recovery = 0x14057b7ef767814fULL;
    static constexpr std::uint64_t evaluation = 0xd1b54a32d192ed03ULL;
};

struct ProblemInstance {
    std::vector<MeasureSource> sources;
    Vector weights;
    std::vector<std::optional<GaussianParams>> gaussians;  // set where the source is Gaussian
    std::vector<const PointSet*> atoms;                     // set where the source is empirical
};

namespace detail {

inline MeasureSource build_source(const json& spec, int dim, const std::filesystem::path& base, Rng& rng) {
    const auto type = spec.at("type").get<std::string>();
    auto vec = [&](const char* key) { return to_vector(spec.at(key).get<std::vector<double>>()); };
    auto gaussian = [&](const json& j) {
        return source::Gaussian(to_vector(j.at("mean").get<std::vector<double>>()),
                                to_matrix(j.at("covariance").get<std::vector<std::vector<double>>>(), "covariance"));
    };
    if (type == "gaussian") {
        auto g = gaussian(spec);
        return MeasureSource::gaussian(g.mean, g.covariance);
    }
    if (type == "gaussian_mixture") {
        std::vector<source::Gaussian> comps;
        for (const auto& c : spec.at("components")) comps.push_back(gaussian(c));
        Vector w = spec.contains("weights") ? vec("weights") : Vector::Constant(static_cast<Eigen::Index>(comps.size()), 1.0);
        if ((w.array() < 0.0).any() || !(w.sum() > 0.0)) throw ConfigError("gaussian_mixture: weights must be nonnegative with a positive sum");
        return MeasureSource::gaussian_mixture(std::move(comps), w / w.sum());
    }
    if (type == "uniform_box") return MeasureSource::uniform_box(Box(vec("lo"), vec("hi")));
    if (type == "annulus") return MeasureSource::annulus(vec("center"), spec.at("inner").get<double>(), spec.at("outer").get<double>());
    if (type == "ellipse") {
        return MeasureSource::ellipse(vec("center"), spec.at("semi_a").get<double>(), spec.at("semi_b").get<double>(),
                                      spec.value("angle", 0.0));
    }
    if (type == "raster") {
        Matrix img;
        if (spec.contains("intensity")) {
            img = to_matrix(spec.at("intensity").get<std::vector<std::vector<double>>>(), "raster intensity");
        } else {
            img = read_points_csv(resolve(base, spec.at("path").get<std::string>()).string()).transpose();
        }
        std::vector<double> row_major;
        for (Eigen::Index r = 0; r < img.rows(); ++r) {
            for (Eigen::Index c = 0; c < img.cols(); ++c) row_major.push_back(img(r, c));
        }
        return MeasureSource::raster(Box(vec("lo"), vec("hi")), static_cast<int>(img.rows()), static_cast<int>(img.cols()), std::move(row_major));
    }
    if (type == "csv") {
        PointSet pts = read_points_csv(resolve(base, spec.at("path").get<std::string>()).string());
        require_dim(pts.rows(), dim, "csv source");
        return MeasureSource::empirical(std::move(pts));
    }
    if (type == "empirical") return MeasureSource::empirical(to_matrix(spec.at("points").get<std::vector<std::vector<double>>>(), "points").transpose());
    if (type == "draws") {
        const MeasureSource inner = build_source(spec.at("source"), dim, base, rng);
        return MeasureSource::empirical(inner.sample(spec.at("count").get<Eigen::Index>(), rng));
    }
    throw ConfigError("unknown source type '" + type + "'");
}

inline GaussianParams random_gaussian(const RandomGaussianSpec& spec, int d, Rng& rng) {
    std::uniform_real_distribution<double> mean_dist(-spec.mean_range, spec.mean_range);
    std::uniform_real_distribution<double> factor_dist(-spec.factor_range, spec.factor_range);
    GaussianParams g;
    g.mean.resize(d);
    for (int k = 0; k < d; ++k) g.mean[k] = mean_dist(rng);
    Matrix a(d, d);
    for (int attempt = 0;; ++attempt) {
        if (attempt == 100000) throw ConfigError("random_gaussians: no factor within the condition range after 100000 draws");
        for (Eigen::Index c = 0; c < d; ++c) {
            for (Eigen::Index r = 0; r < d; ++r) a(r, c) = factor_dist(rng);
        }
        const Eigen::JacobiSVD<Matrix> svd(a);
        const auto& s = svd.singularValues();
        if (!(s[d - 1] > 0.0)) continue;
        const double cond = s[0] / s[d - 1];
        if (cond >= spec.min_condition && cond <= spec.max_condition) break;
    }
    g.covariance = a * a.transpose();
    return g;
}

}  // namespace detail

inline ProblemInstance build_problem(const ExperimentConfig& cfg, std::uint64_t trial_seed) {
    Rng rng(trial_seed ^ TrialStreams::problem);
    const int d = cfg.problem.dimension;
    ProblemInstance inst;
    if (cfg.problem.random_gaussians) {
        for (int i = 0; i < cfg.problem.random_gaussians->count; ++i) {
            GaussianParams g = detail::random_gaussian(*cfg.problem.random_gaussians, d, rng);
            inst.sources.push_back(MeasureSource::gaussian(g.mean, g.covariance));
            inst.gaussians.emplace_back(std::move(g));
        }
    } else {
        for (const auto& spec : cfg.problem.sources) {
            inst.sources.push_back(detail::build_source(spec, d, cfg.base_dir, rng));
            const auto& kind = inst.sources.back().kind();
            if (const auto* g = std::get_if<source::Gaussian>(&kind)) {
                inst.gaussians.emplace_back(GaussianParams{g->mean, g->covariance});
            } else {
                inst.gaussians.emplace_back(std::nullopt);
            }
        }
    }
    for (const auto& s : inst.sources) {
        require_dim(s.dim(), d, "problem source");
        const auto* e = std::get_if<source::Empirical>(&s.kind());
        inst.atoms.push_back(e ? &e->points : nullptr);
    }
    const auto n = static_cast<Eigen::Index>(inst.sources.size());
    inst.weights = cfg.problem.weights ? *cfg.problem.weights : Vector::Constant(n, 1.0 / static_cast<double>(n));
    return inst;
}

struct OracleResult {
    std::string kind;  // "gaussian_fixed_point", "pooled_gaussian" or "none"
    std::optional<GaussianParams> params;
};

inline OracleResult compute_oracle(const ExperimentConfig& cfg, const ProblemInstance& inst) {
    const bool all_gaussian = std::all_of(inst.gaussians.begin(), inst.gaussians.end(), [](const auto& g) { return g.has_value(); });
    const bool all_empirical = std::all_of(inst.atoms.begin(), inst.atoms.end(), [](const auto* a) { return a != nullptr; });
    OracleKind kind = cfg.evaluation.oracle;
    if (kind == OracleKind::automatic) {
        kind = all_gaussian ? OracleKind::gaussian_fixed_point : all_empirical ? OracleKind::pooled_gaussian : OracleKind::none;
    }
    OracleResult out;
    switch (kind) {
        case OracleKind::gaussian_fixed_point: {
            if (!all_gaussian) throw ConfigError("oracle gaussian_fixed_point needs Gaussian inputs only");
            std::vector<GaussianParams> g;
            for (const auto& p : inst.gaussians) g.push_back(*p);
            out.kind = "gaussian_fixed_point";
            out.params = gaussian_fixed_point(g, inst.weights);
            break;
        }
        case OracleKind::pooled_gaussian: {
            if (!all_empirical) throw ConfigError("oracle pooled_gaussian needs empirical inputs only");
            Eigen::Index total = 0;
            for (const auto* a : inst.atoms) total += a->cols();
            PointSet pooled(cfg.problem.dimension, total);
            Eigen::Index off = 0;
            for (const auto* a : inst.atoms) {
                pooled.middleCols(off, a->cols()) = *a;
                off += a->cols();
            }
            out.kind = "pooled_gaussian";
            out.params = gaussian_mle_fit(pooled);
            break;
        }
        default:
            out.kind = "none";
    }
    return out;
}

// ---------------------------------------------------------------------------
// solving and checkpoints

/// Everything a recovery stage needs besides the config: trained potentials
/// and the frame (centering, support box) they were trained in.
struct SolvedProblem {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string solve_hash;
    SolverState state;
    CenteringRecord centering;
    Box support_box;
};

inline SolverConfig trial_solver_config(const ExperimentConfig& cfg, const ProblemInstance& inst, std::uint64_t trial_seed) {
    SolverConfig sc = cfg.solver;
    sc.weights = inst.weights;
    sc.seed = trial_seed;
    return sc;
}

inline std::pair<std::vector<MeasureSource>, CenteringRecord> frame_inputs(const ExperimentConfig& cfg, const ProblemInstance& inst) {
    if (cfg.problem.centering) return center_inputs(inst.sources, inst.weights);
    CenteringRecord rec;
    rec.weights = inst.weights;
    rec.barycenter_mean = Vector::Zero(cfg.problem.dimension);
    for (std::size_t i = 0; i < inst.sources.size(); ++i) rec.means.push_back(Vector::Zero(cfg.problem.dimension));
    return {inst.sources, rec};
}

inline Box support_for(const ExperimentConfig& cfg, std::span<const MeasureSource> framed, std::uint64_t trial_seed) {
    if (cfg.problem.support_box) return *cfg.problem.support_box;
    Rng rng(trial_seed ^ TrialStreams::support);
    return estimate_bounding_box(framed, cfg.problem.support_probe, rng, cfg.problem.support_margin, cfg.problem.support_floor).box;
}

inline json checkpoint_to_json(const SolvedProblem& sp) {
    const auto& pots = sp.state.potentials;
    json j;
    j["format"] = "cwb-checkpoint";
    j["version"] = 1;
    j["config_hash"] = sp.config_hash;
    j["solve_hash"] = sp.solve_hash;
    j["seed"] = sp.seed;
    j["step"] = sp.state.step;
    j["dim"] = pots.dim();
    j["ema_objective"] = sp.state.ema_objective;
    j["weights"] = detail::from_vector(pots.weights);
    j["regularizer"] = {{"family", to_string(pots.regularizer.family)}, {"effective_epsilon", pots.regularizer.epsilon}};
    j["support"] = {{"lo", detail::from_vector(sp.support_box.lo)}, {"hi", detail::from_vector(sp.support_box.hi)}};
    json means = json::array();
    for (const auto& m : sp.centering.means) means.push_back(detail::from_vector(m));
    j["centering"] = {{"means", means}, {"barycenter_mean", detail::from_vector(sp.centering.barycenter_mean)}};
    j["f"] = json::array();
    j["g"] = json::array();
    for (int i = 0; i < pots.size(); ++i) {
        j["f"].push_back(pots.f[static_cast<std::size_t>(i)].to_json());
        j["g"].push_back(pots.g[static_cast<std::size_t>(i)].to_json());
    }
    return j;
}

inline SolvedProblem checkpoint_from_json(const json& j) {
    try {
        if (j.value("format", "") != "cwb-checkpoint") throw IoError("not a cwb-checkpoint file");
        if (j.at("version").get<int>() != 1) throw IoError("unsupported checkpoint version " + j.at("version").dump());
        SolvedProblem sp;
        sp.config_hash = j.at("config_hash").get<std::string>();
        sp.solve_hash = j.at("solve_hash").get<std::string>();
        sp.seed = j.at("seed").get<std::uint64_t>();
        sp.state.step = j.at("step").get<long>();
        sp.state.ema_objective = j.at("ema_objective").get<double>();
        auto& pots = sp.state.potentials;
        pots.weights = detail::to_vector(j.at("weights").get<std::vector<double>>());
        pots.regularizer.family = family_from_string(j.at("regularizer").at("family").get<std::string>());
        pots.regularizer.epsilon = j.at("regularizer").at("effective_epsilon").get<double>();
        pots.regularizer.scale_by_diagonal = false;
        pots.cost = CostFunction::squared_euclidean();
        sp.support_box = Box(detail::to_vector(j.at("support").at("lo").get<std::vector<double>>()),
                             detail::to_vector(j.at("support").at("hi").get<std::vector<double>>()));
        sp.support_box.validate();
        sp.centering.weights = pots.weights;
        for (const auto& m : j.at("centering").at("means")) sp.centering.means.push_back(detail::to_vector(m.get<std::vector<double>>()));
        sp.centering.barycenter_mean = detail::to_vector(j.at("centering").at("barycenter_mean").get<std::vector<double>>());
        for (const auto& f : j.at("f")) pots.f.push_back(Potential::from_json(f));
        for (const auto& g : j.at("g")) pots.g.push_back(Potential::from_json(g));
        const int d = j.at("dim").get<int>();
        const auto n = static_cast<std::size_t>(pots.weights.size());
        if (pots.f.size() != n || pots.g.size() != n || sp.centering.means.size() != n) throw IoError("checkpoint: inconsistent source count");
        for (std::size_t i = 0; i < n; ++i) {
            if (pots.f[i].dim() != d || pots.g[i].dim() != d) throw IoError("checkpoint: potential dimension mismatch");
        }
        if (sp.support_box.dim() != d) throw IoError("checkpoint: support dimension mismatch");
        return sp;
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: ") + e.what());
    }
}

inline void write_checkpoint(const std::filesystem::path& path, const SolvedProblem& sp) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(sp).dump(1) << '\n';
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline SolvedProblem read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

inline std::string artifact_header(const std::string& hash, std::uint64_t seed) {
    return "config_hash=" + hash + " seed=" + std::to_string(seed);
}

inline void write_training_log(std::ostream& os, const std::vector<LogRecord>& log, const std::string& header,
                               const RegularizerSpec& effective) {
    os << "# " << header << '\n' << std::setprecision(17);
    os << "# family=" << to_string(effective.family) << " effective_epsilon=" << effective.epsilon << '\n';
    os << "step,ema_objective,wall_ms\n";
    for (const auto& r : log) os << r.step << ',' << r.ema_objective << ',' << r.wall_ms << '\n';
}

struct SolveOptions {
    std::optional<std::filesystem::path> log_path;
    std::optional<std::filesystem::path> checkpoint_path;  // rewritten every checkpoint_interval steps
    std::function<void(const LogRecord&)> on_log;
};

inline SolvedProblem solve_trial(const ExperimentConfig& cfg, const ProblemInstance& inst, std::uint64_t trial_seed,
                                 const SolveOptions& opt = {}) {
    auto [framed, centering] = frame_inputs(cfg, inst);
    const Box box = support_for(cfg, framed, trial_seed);
    const SupportMeasure support = SupportMeasure::uniform(box);
    const SolverConfig sc = trial_solver_config(cfg, inst, trial_seed);
    SolvedProblem sp;
    sp.seed = trial_seed;
    sp.config_hash = config_hash(cfg.raw);
    sp.solve_hash = solve_hash(cfg.raw);
    sp.centering = centering;
    sp.support_box = box;
    SolveHooks hooks;
    hooks.on_log = opt.on_log;
    if (opt.checkpoint_path && cfg.checkpoint_interval > 0) {
        hooks.checkpoint_interval = cfg.checkpoint_interval;
        hooks.on_checkpoint = [&](const SolverState& st) {
            SolvedProblem snap = sp;
            snap.state = st;
            write_checkpoint(*opt.checkpoint_path, snap);
        };
    }
    SolveResult res = solve(sc, framed, support, hooks);
    sp.state = std::move(res.state);
    if (opt.log_path) {
        std::ofstream out(*opt.log_path);
        if (!out) throw IoError("cannot write " + opt.log_path->string());
        write_training_log(out, res.log, artifact_header(sp.config_hash, trial_seed), sp.state.potentials.regularizer);
    }
    if (opt.checkpoint_path) write_checkpoint(*opt.checkpoint_path, sp);
    return sp;
}

// ---------------------------------------------------------------------------
// recovery and evaluation

struct RecoveryOutput {
    BarycenterSampleSet samples;
    std::optional<DensityGrid> grid;
    std::vector<std::string> warnings;
};

inline RecoveryOutput recover_trial(const ExperimentConfig& cfg, const ProblemInstance& inst, const SolvedProblem& sp) {
    if (sp.solve_hash != solve_hash(cfg.raw)) {
        throw ConfigError("checkpoint was trained under different problem/solver settings (solve hash " + sp.solve_hash + ", config has " +
                          solve_hash(cfg.raw) + ")");
    }
    const auto& rc = cfg.recovery;
    auto [framed, centering] = frame_inputs(cfg, inst);
    if (framed.size() != static_cast<std::size_t>(sp.state.potentials.size())) {
        throw InvalidArgument("checkpoint holds " + std::to_string(sp.state.potentials.size()) + " potential pairs but the problem has " +
                              std::to_string(framed.size()) + " sources");
    }
    const SupportMeasure support = SupportMeasure::uniform(sp.support_box);
    const auto& pots = sp.state.potentials;
    const int n = pots.size();
    std::vector<TransportPlanHandle> plans;
    for (int i = 0; i < n; ++i) plans.push_back(TransportPlanHandle::from_duals(pots, i, framed[static_cast<std::size_t>(i)], support));

    Rng rng(sp.seed ^ TrialStreams::recovery);
    RecoveryOutput out;
    std::vector<TransportMap> maps;
    std::vector<Potential> nets;
    switch (rc.method) {
        case RecoveryMethod::gradmap:
            for (int i = 0; i < n; ++i) {
                maps.emplace_back([&pots, i](const PointSet& X) { return gradient_map(pots.f[static_cast<std::size_t>(i)], X); });
            }
            break;
        case RecoveryMethod::bproj:
            for (int i = 0; i < n; ++i) {
                maps.emplace_back([&plans, &rng, &rc, i](const PointSet& X) {
                    return barycentric_projection_batch(plans[static_cast<std::size_t>(i)], X, rc.projection_y_samples, rng).maps;
                });
            }
            break;
        case RecoveryMethod::mongenet:
            nets.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                MongeFitConfig mc = rc.monge;
                mc.seed = sp.seed + static_cast<std::uint64_t>(i);
                nets.push_back(fit_monge_net(plans[static_cast<std::size_t>(i)], mc, rng));
            }
            for (int i = 0; i < n; ++i) {
                maps.emplace_back([&nets, i](const PointSet& X) { return nets[static_cast<std::size_t>(i)].forward(X); });
            }
            break;
        case RecoveryMethod::mcmc: {
            std::vector<BarycenterSampleSet> parts;
            McmcOptions mo = rc.mcmc;
            mo.proposal_sigma = rc.mcmc_proposal_sigma.value_or(default_proposal_sigma(sp.support_box));
            for (int i = 0; i < n; ++i) {
                const auto count = static_cast<Eigen::Index>(std::llround(pots.weights[i] * static_cast<double>(rc.samples)));
                if (count == 0) {
                    parts.push_back({PointSet(cfg.problem.dimension, 0), RecoveryMethod::mcmc, {}, 0});
                    continue;
                }
                mo.samples = count;
                auto res = mcmc_sample(plans[static_cast<std::size_t>(i)], mo, rng);
                for (auto& w : res.warnings) out.warnings.push_back("source " + std::to_string(i) + ": " + w);
                parts.push_back(std::move(res.samples));
            }
            out.samples = concatenate(parts, RecoveryMethod::mcmc);
            out.samples.points.colwise() += sp.centering.barycenter_mean;
            return out;
        }
        case RecoveryMethod::grid: {
            GridSpec gs{sp.support_box, rc.grid_resolution, rc.grid_normalize_each};
            DensityGrid grid = marginal_grid(plans, pots.weights, rc.grid_x_samples, gs, rng);
            if (grid.degenerate) {
                out.warnings.push_back("density grid is degenerate (a plan carries no mass on the grid)");
            } else {
                out.samples.points = sample_grid(grid, rc.samples, rng);
                out.samples.points.colwise() += sp.centering.barycenter_mean;
            }
            out.samples.method = RecoveryMethod::grid;
            grid.box = Box(grid.box.lo + sp.centering.barycenter_mean, grid.box.hi + sp.centering.barycenter_mean);
            out.grid = std::move(grid);
            return out;
        }
    }
    out.samples = pushforward_barycenter(maps, framed, sp.centering, rc.samples, rc.method, rng, rc.mean_batch);
    if (out.samples.dropped > 0) {
        out.warnings.push_back(std::to_string(out.samples.dropped) + " points dropped where the conditional plan mass vanished");
    }
    return out;
}

struct TrialEvaluation {
    EvalRecord record;
    std::optional<GaussianParams> fit;
    std::vector<W2Point> w2_curve;
};

inline TrialEvaluation evaluate_trial(const ExperimentConfig& cfg, const OracleResult& oracle, const RecoveryOutput& rec,
                                      std::uint64_t trial_seed) {
    TrialEvaluation ev;
    ev.record.seed = trial_seed;
    ev.record.method = to_string(rec.samples.method);
    ev.record.flags = rec.warnings;
    const auto& pts = rec.samples.points;
    if (pts.cols() < 2 || !pts.allFinite()) {
        ev.record.flags.push_back("too few finite barycenter samples for a Gaussian fit");
        ev.record.covariance_error = std::numeric_limits<double>::quiet_NaN();
        ev.record.mean_error = std::numeric_limits<double>::quiet_NaN();
        return ev;
    }
    ev.fit = gaussian_mle_fit(pts);
    if (ev.fit->covariance.trace() < 1e-12 * std::max(1.0, ev.fit->mean.squaredNorm())) {
        ev.record.flags.push_back("barycenter samples collapsed to a point");
    }
    if (oracle.params) {
        ev.record.covariance_error = covariance_error(ev.fit->covariance, oracle.params->covariance);
        ev.record.mean_error = mean_error(ev.fit->mean, oracle.params->mean);
    } else {
        ev.record.covariance_error = std::numeric_limits<double>::quiet_NaN();
        ev.record.mean_error = std::numeric_limits<double>::quiet_NaN();
    }
    const auto& ec = cfg.evaluation;
    if (!ec.w2_sizes.empty()) {
        Rng rng(trial_seed ^ TrialStreams::evaluation);
        PointSet reference;
        if (ec.reference) {
            Rng build_rng = fork(rng);
            reference = detail::build_source(*ec.reference, cfg.problem.dimension, cfg.base_dir, build_rng).sample(ec.reference_samples, rng);
        } else if (oracle.params) {
            reference = MeasureSource::gaussian(oracle.params->mean, oracle.params->covariance).sample(ec.reference_samples, rng);
        } else {
            throw ConfigError("evaluation.w2_sizes needs a reference source or a Gaussian oracle");
        }
        if (pts.cols() < ec.w2_sizes.back()) throw InvalidArgument("not enough barycenter samples for the W2 curve");
        ev.w2_curve = w2_curve(pts, reference, ec.w2_sizes, ec.w2_trials, rng);
        ev.record.w2 = ev.w2_curve.back().mean;
    }
    return ev;
}

inline void write_w2_curve_csv(std::ostream& os, const std::vector<W2Point>& curve, const std::string& header) {
    os << "# " << header << '\n' << std::setprecision(17) << "m,w2_mean,w2_std,trials\n";
    for (const auto& p : curve) os << p.m << ',' << p.mean << ',' << p.std_dev << ',' << p.trials.size() << '\n';
}

inline void write_oracle_json(std::ostream& os, const OracleResult& oracle, const std::string& header) {
    json j;
    j["comment"] = header;
    j["oracle"] = oracle.kind;
    if (oracle.params) {
        j["mean"] = detail::from_vector(oracle.params->mean);
        j["covariance"] = detail::from_matrix(oracle.params->covariance);
    }
    os << j.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// end-to-end

struct RunOptions {
    std::optional<std::uint64_t> seed_override;
    std::optional<std::filesystem::path> output_dir;
    std::optional<long> log_interval;
    std::ostream* progress = nullptr;  // training log lines and warnings
};

struct RunResult {
    EvalReport report;
    std::vector<TrialEvaluation> trials;
    std::filesystem::path output_dir;
};

inline void apply_overrides(ExperimentConfig& cfg, const RunOptions& opt) {
    if (opt.seed_override) cfg.seed = *opt.seed_override;
    if (opt.output_dir) cfg.output_dir = opt.output_dir->string();
    if (opt.log_interval) {
        if (*opt.log_interval < 1) throw ConfigError("log interval must be at least 1");
        cfg.solver.log_interval = *opt.log_interval;
    }
}

namespace detail {
inline void open_for_write(std::ofstream& out, const std::filesystem::path& p) {
    out.open(p);
    if (!out) throw IoError("cannot write " + p.string());
}
}  // namespace detail

/// Trial t uses seed + t and writes into <out>/trial_<t>/. The eval CSV and
/// text summary go to <out>/.
inline RunResult run_experiment(ExperimentConfig cfg, const RunOptions& opt = {}) {
    apply_overrides(cfg, opt);
    namespace fs = std::filesystem;
    const fs::path out_dir = detail::resolve(".", cfg.output_dir);
    fs::create_directories(out_dir);
    const std::string hash = config_hash(cfg.raw);
    RunResult result;
    result.output_dir = out_dir;
    for (int t = 0; t < cfg.evaluation.trials; ++t) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(t);
        const fs::path dir = out_dir / ("trial_" + std::to_string(t));
        fs::create_directories(dir);
        const auto start = std::chrono::steady_clock::now();
        const ProblemInstance inst = build_problem(cfg, seed);
        const OracleResult oracle = compute_oracle(cfg, inst);
        SolveOptions so;
        so.log_path = dir / "training_log.csv";
        so.checkpoint_path = dir / "checkpoint.json";
        if (opt.progress) {
            so.on_log = [&, t](const LogRecord& r) {
                *opt.progress << "trial " << t << " step " << r.step << " ema_objective " << std::setprecision(8) << r.ema_objective << '\n';
            };
        }
        const SolvedProblem sp = solve_trial(cfg, inst, seed, so);
        const RecoveryOutput rec = recover_trial(cfg, inst, sp);
        TrialEvaluation ev = evaluate_trial(cfg, oracle, rec, seed);
        if (cfg.solver.steps == 0) ev.record.flags.push_back("solver ran 0 steps; recovery used initialized potentials");
        ev.record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        const std::string header = artifact_header(hash, seed);
        std::ofstream f;
        detail::open_for_write(f, dir / "samples.csv");
        write_samples_csv(f, rec.samples, {header});
        f.close();
        if (rec.grid) {
            detail::open_for_write(f, dir / "grid.csv");
            write_grid_csv(f, *rec.grid, {header});
            f.close();
        }
        if (!ev.w2_curve.empty()) {
            detail::open_for_write(f, dir / "w2_curve.csv");
            write_w2_curve_csv(f, ev.w2_curve, header);
            f.close();
        }
        detail::open_for_write(f, dir / "oracle.json");
        write_oracle_json(f, oracle, header);
        f.close();
        if (opt.progress) {
            for (const auto& w : ev.record.flags) *opt.progress << "trial " << t << " warning: " << w << '\n';
        }
        result.report.records.push_back(ev.record);
        result.trials.push_back(std::move(ev));
    }
    const std::string header = artifact_header(hash, cfg.seed);
    std::ofstream f;
    detail::open_for_write(f, out_dir / "eval.csv");
    result.report.write_csv(f, {header});
    f.close();
    detail::open_for_write(f, out_dir / "summary.txt");
    f << "# " << header << '\n';
    result.report.write_summary(f);
    return result;
}

}  // namespace cwb
