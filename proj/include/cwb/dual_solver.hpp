#pragma once

// Stochastic gradient ascent on the unconstrained barycenter dual
//
//   E[ sum_i w_i ( f_i(X_i) - R*( f_i(X_i) + g_i(Y) - sum_j w_j g_j(Y) - c(X_i, Y) ) ) ]
//
// with X_i ~ mu_i and Y ~ eta, one Adam optimizer per parameter vector.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cwb/adam.hpp"
#include "cwb/measures.hpp"
#include "cwb/potentials.hpp"
#include "cwb/regularization.hpp"

namespace cwb {

/// Trained (or in-training) potentials f_i, g_i together with what is needed
/// to interpret them. `regularizer` holds the effective (already scaled) eps.
struct DualPotentials {
    std::vector<Potential> f;
    std::vector<Potential> g;
    Vector weights;
    RegularizerSpec regularizer;
    CostFunction cost;

    [[nodiscard]] int size() const { return static_cast<int>(f.size()); }
    [[nodiscard]] int dim() const { return f.empty() ? 0 : f.front().dim(); }

    /// Raw g_i(Y) for every i; n x N.
    [[nodiscard]] Matrix raw_g(const Matrix& Y) const {
        Matrix out(size(), Y.cols());
        for (int i = 0; i < size(); ++i) out.row(i) = g[static_cast<std::size_t>(i)].forward(Y);
        return out;
    }

    /// Centered g_i - sum_j w_j g_j for every i; n x N. The weighted sum of
    /// the rows vanishes.
    [[nodiscard]] Matrix centered_g(const Matrix& Y) const {
        Matrix raw = raw_g(Y);
        const Eigen::RowVectorXd mean = weights.transpose() * raw;
        raw.rowwise() -= mean;
        return raw;
    }

    [[nodiscard]] Vector centered_g(int i, const Matrix& Y) const { return centered_g(Y).row(i).transpose(); }
};

struct SolverConfig {
    Vector weights;
    RegularizerSpec regularizer;
    CostFunction cost = CostFunction::squared_euclidean();
    Eigen::Index batch_size = 4096;
    long steps = 20000;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    PotentialSpec f_spec = MlpSpec{};
    PotentialSpec g_spec = MlpSpec{};
    long log_interval = 100;
    double ema_decay = 0.99;
    /// Ablation: one y draw shared by every tuple of a batch instead of one
    /// y per tuple.
    bool shared_y = false;
    /// Decay of an exponential average of the potential parameters; 0 keeps
    /// the last iterate. When positive, `solve` returns the bias-corrected
    /// average instead of the final iterate.
    double param_average = 0.0;

    void validate(std::size_t n_sources) const {
        validate_weights(weights, n_sources);
        regularizer.validate();
        if (batch_size < 1) throw InvalidArgument("solver: batch size must be at least 1");
        if (steps < 0) throw InvalidArgument("solver: step count must be nonnegative");
        if (!(adam.learning_rate > 0.0)) throw InvalidArgument("solver: learning rate must be positive");
        if (log_interval < 1) throw InvalidArgument("solver: log interval must be at least 1");
        if (!(param_average >= 0.0 && param_average < 1.0)) throw InvalidArgument("solver: parameter average decay must lie in [0, 1)");
    }
};

struct SolverState {
    DualPotentials potentials;
    std::vector<AdamState> f_adam;
    std::vector<AdamState> g_adam;
    long step = 0;
    double ema_objective = 0.0;
    double last_objective = 0.0;
};

/// One draw per input measure plus one shared y per tuple; column b of every
/// matrix belongs to tuple b.
struct TupleBatch {
    std::vector<PointSet> x;
    PointSet y;

    [[nodiscard]] Eigen::Index size() const { return y.cols(); }
};

struct DualGradient {
    double objective = 0.0;
    std::vector<Vector> f;
    std::vector<Vector> g;
};

struct LogRecord {
    long step = 0;
    double ema_objective = 0.0;
    double wall_ms = 0.0;
};

inline SolverState init_solver_state(const SolverConfig& config, int dim, const SupportMeasure& support) {
    require_dim(support.dim(), dim, "solver support");
    const auto n = static_cast<std::size_t>(config.weights.size());
    SolverState state;
    auto& pots = state.potentials;
    pots.weights = config.weights;
    pots.regularizer = config.regularizer.resolved(support.box);
    pots.cost = config.cost;
    Rng seeder(config.seed);
    for (std::size_t i = 0; i < n; ++i) {
        pots.f.push_back(Potential::init(config.f_spec, dim, 1, seeder()));
        pots.g.push_back(Potential::init(config.g_spec, dim, 1, seeder()));
        state.f_adam.emplace_back(pots.f.back().parameter_count());
        state.g_adam.emplace_back(pots.g.back().parameter_count());
    }
    return state;
}

inline TupleBatch draw_batch(std::span<const MeasureSource> sources, const SupportMeasure& support, Eigen::Index batch_size,
                             Rng& rng, bool shared_y = false) {
    TupleBatch batch;
    batch.x.reserve(sources.size());
    for (const auto& src : sources) batch.x.push_back(src.sample(batch_size, rng));
    if (shared_y) {
        batch.y = support.sample(1, rng).replicate(1, batch_size);
    } else {
        batch.y = support.sample(batch_size, rng);
    }
    return batch;
}

namespace detail {

struct DualTerms {
    std::vector<Vector> f_vals;  // per i, B
    Matrix g_raw;                // n x B
    std::vector<Vector> slack;   // f_i + g_i - gbar - c_i, per i
};

inline DualTerms evaluate_terms(const DualPotentials& pots, const TupleBatch& batch, std::vector<Potential::Cache>* f_cache,
                                std::vector<Potential::Cache>* g_cache) {
    const int n = pots.size();
    if (static_cast<int>(batch.x.size()) != n) throw DimensionError("batch: expected one x block per input measure");
    DualTerms t;
    t.g_raw.resize(n, batch.size());
    for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        require_dim(batch.x[ui].cols(), batch.size(), "batch x count");
        if (f_cache) t.f_vals.push_back(pots.f[ui].forward(batch.x[ui], (*f_cache)[ui]).row(0).transpose());
        else t.f_vals.push_back(pots.f[ui].forward(batch.x[ui]).row(0).transpose());
        if (g_cache) t.g_raw.row(i) = pots.g[ui].forward(batch.y, (*g_cache)[ui]);
        else t.g_raw.row(i) = pots.g[ui].forward(batch.y);
    }
    const Vector gbar = (pots.weights.transpose() * t.g_raw).transpose();
    for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        t.slack.push_back(t.f_vals[ui] + t.g_raw.row(i).transpose() - gbar - pots.cost.paired(batch.x[ui], batch.y));
    }
    return t;
}

}  // namespace detail

/// Monte Carlo estimate of the dual objective over the batch.
inline double objective_estimate(const DualPotentials& pots, const TupleBatch& batch) {
    if (batch.size() < 1) throw InvalidArgument("objective_estimate: empty batch");
    const auto t = detail::evaluate_terms(pots, batch, nullptr, nullptr);
    double total = 0.0;
    for (int i = 0; i < pots.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        double acc = 0.0;
        for (Eigen::Index b = 0; b < batch.size(); ++b) acc += t.f_vals[ui][b] - r_star(pots.regularizer, t.slack[ui][b]);
        total += pots.weights[i] * acc;
    }
    return total / static_cast<double>(batch.size());
}

/// Batch objective and its gradient with respect to every f_i and g_i parameter.
inline DualGradient dual_gradient(const DualPotentials& pots, const TupleBatch& batch) {
    const int n = pots.size();
    const auto B = batch.size();
    if (B < 1) throw InvalidArgument("dual_gradient: empty batch");
    std::vector<Potential::Cache> f_cache(static_cast<std::size_t>(n));
    std::vector<Potential::Cache> g_cache(static_cast<std::size_t>(n));
    const auto t = detail::evaluate_terms(pots, batch, &f_cache, &g_cache);

    DualGradient out;
    Matrix rprime(n, B);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        double acc = 0.0;
        for (Eigen::Index b = 0; b < B; ++b) {
            acc += t.f_vals[ui][b] - r_star(pots.regularizer, t.slack[ui][b]);
            rprime(i, b) = r_star_prime(pots.regularizer, t.slack[ui][b]);
        }
        total += pots.weights[i] * acc;
    }
    const double inv_b = 1.0 / static_cast<double>(B);
    out.objective = total * inv_b;

    // dF/df_i(x_ib) = w_i (1 - R*'(s_ib)) / B
    // dF/dg_k(y_b)  = w_k (sum_i w_i R*'(s_ib) - R*'(s_kb)) / B
    const Eigen::RowVectorXd mixed = pots.weights.transpose() * rprime;
    for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const double w = pots.weights[i];
        Matrix up_f = (w * inv_b) * (1.0 - rprime.row(i).array()).matrix();
        Matrix up_g = (w * inv_b) * (mixed - rprime.row(i));
        out.f.push_back(Vector::Zero(pots.f[ui].parameter_count()));
        out.g.push_back(Vector::Zero(pots.g[ui].parameter_count()));
        pots.f[ui].backward(f_cache[ui], up_f, &out.f.back(), nullptr);
        pots.g[ui].backward(g_cache[ui], up_g, &out.g.back(), nullptr);
    }
    return out;
}

namespace detail {

inline std::string divergence_snapshot(const SolverState& state, const TupleBatch& batch) {
    double max_f = 0.0;
    double max_g = 0.0;
    const auto& pots = state.potentials;
    for (int i = 0; i < pots.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        max_f = std::max(max_f, pots.f[ui].forward(batch.x[ui]).cwiseAbs().maxCoeff());
        max_g = std::max(max_g, pots.g[ui].forward(batch.y).cwiseAbs().maxCoeff());
    }
    std::ostringstream os;
    os << "step=" << state.step << " eps=" << pots.regularizer.epsilon << " max|f|=" << max_f << " max|g|=" << max_g;
    return os.str();
}

}  // namespace detail

/// Draws one batch, ascends the dual with Adam, returns the batch objective.
inline double sgd_step(SolverState& state, const SolverConfig& config, std::span<const MeasureSource> sources,
                       const SupportMeasure& support, Rng& rng) {
    const TupleBatch batch = draw_batch(sources, support, config.batch_size, rng, config.shared_y);
    DualGradient grad;
    try {
        grad = dual_gradient(state.potentials, batch);
    } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " [" + detail::divergence_snapshot(state, batch) + "]");
    }
    if (!std::isfinite(grad.objective)) {
        throw DivergenceError("non-finite dual objective [" + detail::divergence_snapshot(state, batch) + "]");
    }
    auto& pots = state.potentials;
    for (int i = 0; i < pots.size(); ++i) {
        const auto ui = static_cast<std::size_t>(i);
        state.f_adam[ui].apply(pots.f[ui].parameters(), grad.f[ui], config.adam, true);
        state.g_adam[ui].apply(pots.g[ui].parameters(), grad.g[ui], config.adam, true);
    }
    state.ema_objective = state.step == 0 ? grad.objective
                                          : config.ema_decay * state.ema_objective + (1.0 - config.ema_decay) * grad.objective;
    state.last_objective = grad.objective;
    ++state.step;
    return grad.objective;
}

struct SolveHooks {
    std::function<void(const LogRecord&)> on_log;
    long checkpoint_interval = 0;
    std::function<void(const SolverState&)> on_checkpoint;
};

struct SolveResult {
    SolverState state;
    std::vector<LogRecord> log;
};

/// Runs `config.steps` ascent steps from a fresh initialization. Sources are
/// expected to be centered already when centering is in use.
inline SolveResult solve(const SolverConfig& config, std::span<const MeasureSource> sources, const SupportMeasure& support,
                         const SolveHooks& hooks = {}) {
    if (sources.empty()) throw InvalidArgument("solve: no input measures");
    config.validate(sources.size());
    const int d = sources.front().dim();
    for (const auto& s : sources) require_dim(s.dim(), d, "solve input");
    SolveResult result{init_solver_state(config, d, support), {}};
    Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    auto& pots = result.state.potentials;
    const bool averaging = config.param_average > 0.0;
    std::vector<Vector> avg;
    if (averaging) {
        for (int i = 0; i < pots.size(); ++i) {
            avg.push_back(Vector::Zero(pots.f[static_cast<std::size_t>(i)].parameter_count()));
            avg.push_back(Vector::Zero(pots.g[static_cast<std::size_t>(i)].parameter_count()));
        }
    }
    const double a = config.param_average;
    const auto start = std::chrono::steady_clock::now();
    for (long s = 0; s < config.steps; ++s) {
        sgd_step(result.state, config, sources, support, rng);
        if (averaging) {
            for (int i = 0; i < pots.size(); ++i) {
                const auto ui = static_cast<std::size_t>(i);
                avg[2 * ui] = a * avg[2 * ui] + (1.0 - a) * pots.f[ui].parameters();
                avg[2 * ui + 1] = a * avg[2 * ui + 1] + (1.0 - a) * pots.g[ui].parameters();
            }
        }
        const long done = result.state.step;
        if (done % config.log_interval == 0 || done == config.steps) {
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            result.log.push_back({done, result.state.ema_objective, ms});
            if (hooks.on_log) hooks.on_log(result.log.back());
        }
        if (hooks.checkpoint_interval > 0 && hooks.on_checkpoint && done % hooks.checkpoint_interval == 0) {
            hooks.on_checkpoint(result.state);
        }
    }
    if (averaging && config.steps > 0) {
        const double correction = 1.0 - std::pow(a, static_cast<double>(config.steps));
        for (int i = 0; i < pots.size(); ++i) {
            const auto ui = static_cast<std::size_t>(i);
            pots.f[ui].parameters() = avg[2 * ui] / correction;
            pots.g[ui].parameters() = avg[2 * ui + 1] / correction;
        }
    }
    return result;
}

}  // namespace cwb
