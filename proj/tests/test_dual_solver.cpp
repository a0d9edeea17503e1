#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "cwb/dual_solver.hpp"

using namespace cwb;

namespace {

std::vector<MeasureSource> two_gaussians_2d() {
    Matrix c1(2, 2);
    c1 << 1.0, 0.3, 0.3, 0.5;
    Matrix c2(2, 2);
    c2 << 0.4, -0.1, -0.1, 2.0;
    Vector m1(2);
    m1 << 0.5, -0.2;
    return {MeasureSource::gaussian(m1, c1), MeasureSource::gaussian(-m1, c2)};
}

std::vector<MeasureSource> three_sources_2d() {
    auto s = two_gaussians_2d();
    s.push_back(MeasureSource::uniform_box(Box(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0))));
    return s;
}

SupportMeasure box4() { return SupportMeasure::uniform(Box(Vector::Constant(2, -4.0), Vector::Constant(2, 4.0))); }

SolverConfig small_config(Family fam, double eps, const PotentialSpec& spec, int n) {
    SolverConfig c;
    c.weights = Vector::Constant(n, 1.0 / n);
    if (n == 3) c.weights << 0.5, 0.3, 0.2;
    c.regularizer = RegularizerSpec{fam, eps, false};
    c.batch_size = 64;
    c.steps = 20;
    c.adam.learning_rate = 1e-3;
    c.seed = 3;
    c.f_spec = spec;
    c.g_spec = spec;
    c.log_interval = 5;
    return c;
}

// Random, non-trivial potentials so every term of the objective is active.
SolverState perturbed_state(const SolverConfig& c, std::uint64_t seed, double amp) {
    auto st = init_solver_state(c, 2, box4());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, amp);
    for (auto* list : {&st.potentials.f, &st.potentials.g}) {
        for (auto& p : *list) {
            for (Eigen::Index k = 0; k < p.parameter_count(); ++k) p.parameters()[k] += n(rng);
        }
    }
    return st;
}

// Direct per-tuple evaluation of the dual objective.
double loop_objective(const DualPotentials& pots, const TupleBatch& b) {
    const int n = pots.size();
    double total = 0.0;
    for (Eigen::Index t = 0; t < b.size(); ++t) {
        const Vector y = b.y.col(t);
        std::vector<double> g(static_cast<std::size_t>(n));
        double gbar = 0.0;
        for (int i = 0; i < n; ++i) {
            g[static_cast<std::size_t>(i)] = pots.g[static_cast<std::size_t>(i)].value(y);
            gbar += pots.weights[i] * g[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < n; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            const Vector x = b.x[ui].col(t);
            const double f = pots.f[ui].value(x);
            total += pots.weights[i] * (f - r_star(pots.regularizer, f + g[ui] - gbar - (x - y).squaredNorm()));
        }
    }
    return total / static_cast<double>(b.size());
}

TupleBatch slice(const TupleBatch& b, Eigen::Index t) {
    TupleBatch s;
    for (const auto& x : b.x) s.x.push_back(x.col(t));
    s.y = b.y.col(t);
    return s;
}

double relative_error(const Vector& a, const Vector& b) {
    const double scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace

TEST(Batch, SharedYRepeatsOneDraw) {
    const auto src = two_gaussians_2d();
    Rng a(4);
    Rng b(4);
    const auto own = draw_batch(src, box4(), 50, a);
    const auto shared = draw_batch(src, box4(), 50, b, true);
    for (Eigen::Index t = 1; t < 50; ++t) EXPECT_EQ(shared.y.col(t), shared.y.col(0));
    EXPECT_NE(own.y.col(1), own.y.col(0));
    // x draws come first and are unaffected
    EXPECT_EQ(own.x[0], shared.x[0]);
    EXPECT_EQ(own.x[1], shared.x[1]);
}

TEST(Objective, MatchesLoopOracle) {
    for (auto fam : {Family::entropic, Family::quadratic}) {
        const auto cfg = small_config(fam, 0.5, MlpSpec{{8, 8}}, 3);
        const auto st = perturbed_state(cfg, 1, 0.1);
        const auto src = three_sources_2d();
        Rng rng(2);
        const auto b = draw_batch(src, box4(), 50, rng);
        const double got = objective_estimate(st.potentials, b);
        EXPECT_NEAR(got, loop_objective(st.potentials, b), 1e-12 * std::max(1.0, std::abs(got)));
        EXPECT_NEAR(dual_gradient(st.potentials, b).objective, got, 1e-12 * std::max(1.0, std::abs(got)));
    }
}

TEST(Objective, InvariantToCommonShiftOfG) {
    const auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{8}}, 3);
    auto st = perturbed_state(cfg, 4, 0.2);
    const auto src = three_sources_2d();
    Rng rng(5);
    const auto b = draw_batch(src, box4(), 40, rng);
    const double before = objective_estimate(st.potentials, b);
    for (auto& g : st.potentials.g) g.bias_mut(g.layer_count() - 1)[0] += 3.7;
    EXPECT_NEAR(objective_estimate(st.potentials, b), before, 1e-12);
}

TEST(Objective, CenteredGSumsToZero) {
    const auto cfg = small_config(Family::entropic, 1.0, MlpSpec{{8}}, 3);
    const auto st = perturbed_state(cfg, 6, 0.3);
    Rng rng(7);
    const PointSet Y = box4().sample(30, rng);
    const Matrix c = st.potentials.centered_g(Y);
    EXPECT_LT((st.potentials.weights.transpose() * c).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Objective, SingleMeasureHasZeroCenteredG) {
    const auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{8}}, 1);
    const auto st = perturbed_state(cfg, 8, 0.5);
    Rng rng(9);
    const PointSet Y = box4().sample(30, rng);
    EXPECT_EQ(st.potentials.centered_g(Y), Matrix::Zero(1, 30));
    const std::vector<MeasureSource> src{two_gaussians_2d()[0]};
    const auto b = draw_batch(src, box4(), 30, rng);
    const auto g = dual_gradient(st.potentials, b);
    EXPECT_EQ(g.g[0], Vector::Zero(g.g[0].size()));
}

TEST(Gradient, BatchIsMeanOfSingleTuples) {
    const auto cfg = small_config(Family::entropic, 0.7, MlpSpec{{6, 5}}, 3);
    const auto st = perturbed_state(cfg, 10, 0.2);
    const auto src = three_sources_2d();
    Rng rng(11);
    const auto b = draw_batch(src, box4(), 16, rng);
    const auto full = dual_gradient(st.potentials, b);
    for (std::size_t i = 0; i < 3; ++i) {
        Vector mf = Vector::Zero(full.f[i].size());
        Vector mg = Vector::Zero(full.g[i].size());
        for (Eigen::Index t = 0; t < 16; ++t) {
            const auto one = dual_gradient(st.potentials, slice(b, t));
            mf += one.f[i] / 16.0;
            mg += one.g[i] / 16.0;
        }
        EXPECT_LT(relative_error(full.f[i], mf), 1e-12);
        EXPECT_LT(relative_error(full.g[i], mg), 1e-12);
    }
}

TEST(Gradient, MatchesFiniteDifferences) {
    // smooth potentials so central differences are exact to O(h^2)
    for (auto fam : {Family::entropic, Family::quadratic}) {
        const auto cfg = small_config(fam, 0.8, RffSpec{24, 0.7}, 3);
        auto st = perturbed_state(cfg, 12, 0.3);
        const auto src = three_sources_2d();
        Rng rng(13);
        const auto b = draw_batch(src, box4(), 200, rng);
        const auto grad = dual_gradient(st.potentials, b);
        const double h = 1e-6;
        for (std::size_t i = 0; i < 3; ++i) {
            for (auto* which : {&st.potentials.f, &st.potentials.g}) {
                Potential& p = (*which)[i];
                const Vector& analytic = which == &st.potentials.f ? grad.f[i] : grad.g[i];
                Vector fd(p.parameter_count());
                for (Eigen::Index k = 0; k < p.parameter_count(); ++k) {
                    const double keep = p.parameters()[k];
                    p.parameters()[k] = keep + h;
                    const double up = objective_estimate(st.potentials, b);
                    p.parameters()[k] = keep - h;
                    const double dn = objective_estimate(st.potentials, b);
                    p.parameters()[k] = keep;
                    fd[k] = (up - dn) / (2 * h);
                }
                EXPECT_LT(relative_error(analytic, fd), 1e-6);
            }
        }
    }
}

TEST(Step, ZeroWeightNetworkMovesOnlyOutputBiases) {
    auto cfg = small_config(Family::quadratic, 1.0, MlpSpec{{8, 8}}, 3);
    auto st = init_solver_state(cfg, 2, box4());
    for (auto* list : {&st.potentials.f, &st.potentials.g}) {
        for (auto& p : *list) p.parameters().setZero();
    }
    const auto src = three_sources_2d();
    Rng rng(14);
    sgd_step(st, cfg, src, box4(), rng);
    // zero potentials give slack -c <= 0, where the quadratic R*' vanishes: the g
    // gradient is exactly zero and f_i only feels its weight through the output bias
    for (auto& p : st.potentials.f) {
        const Eigen::Index n = p.parameter_count();
        EXPECT_EQ(p.parameters().head(n - 1), Vector::Zero(n - 1));
        // Adam's first step has magnitude lr in every coordinate with a nonzero gradient
        EXPECT_NEAR(p.parameters()[n - 1], cfg.adam.learning_rate, 1e-8);
    }
    for (auto& p : st.potentials.g) EXPECT_EQ(p.parameters(), Vector::Zero(p.parameter_count()));
}

TEST(Step, AdamFirstStepMagnitude) {
    const auto cfg = small_config(Family::entropic, 0.5, MlpSpec{{8}}, 3);
    auto st = perturbed_state(cfg, 15, 0.1);
    const auto before = st.potentials.f[0].parameters();
    const auto src = three_sources_2d();
    Rng rng(16);
    Rng probe = rng;
    const auto grad = dual_gradient(st.potentials, draw_batch(src, box4(), cfg.batch_size, probe));
    sgd_step(st, cfg, src, box4(), rng);
    const Vector delta = st.potentials.f[0].parameters() - before;
    for (Eigen::Index k = 0; k < delta.size(); ++k) {
        if (std::abs(grad.f[0][k]) < 1e-6) continue;
        EXPECT_NEAR(delta[k], cfg.adam.learning_rate * (grad.f[0][k] > 0 ? 1.0 : -1.0), 1e-7);
    }
}

TEST(Solve, DeterministicForFixedSeed) {
    const auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{8, 8}}, 3);
    const auto src = three_sources_2d();
    const auto a = solve(cfg, src, box4());
    const auto b = solve(cfg, src, box4());
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& pa = a.state.potentials.f[i].parameters();
        const auto& pb = b.state.potentials.f[i].parameters();
        ASSERT_EQ(pa.size(), pb.size());
        EXPECT_EQ(0, std::memcmp(pa.data(), pb.data(), sizeof(double) * static_cast<std::size_t>(pa.size())));
    }
    auto other = cfg;
    other.seed = 4;
    const auto c = solve(other, src, box4());
    EXPECT_NE(c.state.potentials.f[0].parameters(), a.state.potentials.f[0].parameters());
}

TEST(Solve, LogAndCheckpointHooks) {
    auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{4}}, 3);
    cfg.steps = 23;
    const auto src = three_sources_2d();
    std::vector<long> logged;
    std::vector<long> saved;
    SolveHooks hooks;
    hooks.on_log = [&](const LogRecord& r) { logged.push_back(r.step); };
    hooks.checkpoint_interval = 10;
    hooks.on_checkpoint = [&](const SolverState& s) { saved.push_back(s.step); };
    const auto r = solve(cfg, src, box4(), hooks);
    EXPECT_EQ(logged, (std::vector<long>{5, 10, 15, 20, 23}));
    EXPECT_EQ(saved, (std::vector<long>{10, 20}));
    EXPECT_EQ(r.log.size(), 5u);
    EXPECT_EQ(r.state.step, 23);
}

TEST(Solve, ParameterAverageIsBiasCorrectedEma) {
    auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{4}}, 3);
    const auto src = three_sources_2d();
    cfg.steps = 1;
    const auto one = solve(cfg, src, box4());
    cfg.steps = 2;
    const auto two = solve(cfg, src, box4());
    cfg.param_average = 0.5;
    const auto avg = solve(cfg, src, box4());
    for (std::size_t i = 0; i < 3; ++i) {
        // (0.25 p1 + 0.5 p2) / (1 - 0.25)
        const Vector fe = one.state.potentials.f[i].parameters() / 3.0 + 2.0 * two.state.potentials.f[i].parameters() / 3.0;
        const Vector ge = one.state.potentials.g[i].parameters() / 3.0 + 2.0 * two.state.potentials.g[i].parameters() / 3.0;
        EXPECT_LT((avg.state.potentials.f[i].parameters() - fe).norm(), 1e-12);
        EXPECT_LT((avg.state.potentials.g[i].parameters() - ge).norm(), 1e-12);
    }
    cfg.param_average = 1.0;
    EXPECT_THROW(solve(cfg, src, box4()), InvalidArgument);
}

TEST(Solve, ZeroStepsReturnsInitialization) {
    auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{4}}, 3);
    cfg.steps = 0;
    const auto src = three_sources_2d();
    const auto r = solve(cfg, src, box4());
    const auto init = init_solver_state(cfg, 2, box4());
    EXPECT_EQ(r.state.potentials.f[1].parameters(), init.potentials.f[1].parameters());
    EXPECT_TRUE(r.log.empty());
}

TEST(Solve, RejectsInvalidConfiguration) {
    const auto src = three_sources_2d();
    auto cfg = small_config(Family::quadratic, 0.5, MlpSpec{{4}}, 3);
    cfg.weights << 0.5, 0.5, 0.5;
    EXPECT_THROW(solve(cfg, src, box4()), InvalidArgument);
    cfg = small_config(Family::quadratic, 0.5, MlpSpec{{4}}, 3);
    cfg.batch_size = 0;
    EXPECT_THROW(solve(cfg, src, box4()), InvalidArgument);
    cfg = small_config(Family::quadratic, 0.5, MlpSpec{{4}}, 2);
    EXPECT_THROW(solve(cfg, src, box4()), Error);
    cfg = small_config(Family::quadratic, -1.0, MlpSpec{{4}}, 3);
    EXPECT_THROW(solve(cfg, src, box4()), InvalidArgument);
}

TEST(Solve, EntropicDivergenceCarriesSnapshot) {
    auto cfg = small_config(Family::entropic, 1e-3, MlpSpec{{4}}, 3);
    auto st = init_solver_state(cfg, 2, box4());
    for (auto& p : st.potentials.f) p.bias_mut(p.layer_count() - 1)[0] = 100.0;
    const auto src = three_sources_2d();
    Rng rng(17);
    try {
        sgd_step(st, cfg, src, box4(), rng);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step=0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("max|f|="), std::string::npos) << msg;
    }
}

TEST(Solve, ObjectiveClimbsTowardTransportCost) {
    // centered 1D problem: N(-2, 1) and N(2, 1), barycenter N(0, 1)
    SolverConfig cfg;
    cfg.weights = Vector::Constant(2, 0.5);
    cfg.regularizer = RegularizerSpec{Family::quadratic, 1e-2, false};
    cfg.batch_size = 256;
    cfg.steps = 1500;
    cfg.adam.learning_rate = 1e-3;
    cfg.seed = 1;
    cfg.f_spec = MlpSpec{{32, 32}};
    cfg.g_spec = MlpSpec{{32, 32}};
    cfg.log_interval = 500;
    const std::vector<MeasureSource> src{MeasureSource::gaussian(Vector::Constant(1, -2.0), Matrix::Identity(1, 1)),
                                         MeasureSource::gaussian(Vector::Constant(1, 2.0), Matrix::Identity(1, 1))};
    const auto support = SupportMeasure::uniform(Box(Vector::Constant(1, -5.0), Vector::Constant(1, 5.0)));
    const auto r = solve(cfg, src, support);
    ASSERT_EQ(r.log.size(), 3u);
    EXPECT_GT(r.log.back().ema_objective, r.log.front().ema_objective);
    // OT cost from N(+-2, 1) to N(0, 1) is 4; the dual value approaches it from below
    EXPECT_LT(r.log.back().ema_objective, 4.0 + 0.2);
}
