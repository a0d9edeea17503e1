#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "cwb/adam.hpp"
#include "cwb/potentials.hpp"
#include "gradcheck.hpp"

using namespace cwb;

namespace {

// Straightforward loop forward pass, independent of the Eigen products.
double loop_forward(const Potential& p, const Vector& x) {
    std::vector<double> a(x.data(), x.data() + x.size());
    const auto& w = p.layer_widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const auto W = p.weight(l);
        const auto b = p.bias(l);
        std::vector<double> z(static_cast<std::size_t>(w[l + 1]));
        for (int i = 0; i < w[l + 1]; ++i) {
            double acc = b[i];
            for (int j = 0; j < w[l]; ++j) acc += W(i, j) * a[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(i)] = (l + 2 < w.size()) ? std::max(acc, 0.0) : acc;
        }
        a = std::move(z);
    }
    return a[0];
}

Vector randn(Eigen::Index n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = d(rng);
    return v;
}

}  // namespace

TEST(Init, RffStartsAtZero) {
    const auto p = Potential::init(RffSpec{2048, 1.0}, 2, 1, 5);
    EXPECT_EQ(p.parameter_count(), 2048);
    std::mt19937_64 rng(1);
    for (int k = 0; k < 10; ++k) EXPECT_EQ(p.value(randn(2, rng)), 0.0);
    EXPECT_EQ(p.input_gradient(randn(2, rng)), Vector::Zero(2));
}

TEST(Init, RffFrequencyAndPhaseLaw) {
    const auto p = Potential::init(RffSpec{20000, 0.5}, 2, 1, 6);
    const Matrix& w = p.frequencies();
    const double var = w.array().square().mean();
    EXPECT_NEAR(std::sqrt(var), 0.5, 0.01);
    EXPECT_GE(p.phases().minCoeff(), 0.0);
    EXPECT_LT(p.phases().maxCoeff(), 2.0 * std::numbers::pi);
    EXPECT_NEAR(p.phases().mean(), std::numbers::pi, 0.05);
}

TEST(Init, MlpFanInScaleAndZeroBias) {
    const auto p = Potential::init(MlpSpec{{128, 256}}, 2, 1, 7);
    EXPECT_EQ(p.parameter_count(), 2 * 128 + 128 + 128 * 256 + 256 + 256 + 1);
    for (std::size_t l = 0; l < (p.layer_widths().size() - 1); ++l) {
        EXPECT_EQ(p.bias(l), Vector::Zero(p.bias(l).size()));
        const double var = p.weight(l).array().square().mean();
        const double want = 2.0 / p.layer_widths()[l];
        // loose: the smallest layer only has 256 entries
        EXPECT_NEAR(var / want, 1.0, l == 0 ? 0.3 : 0.05);
    }
}

TEST(Init, InvalidSpecs) {
    EXPECT_THROW(Potential::init(RffSpec{0, 1.0}, 2, 1, 1), InvalidArgument);
    EXPECT_THROW(Potential::init(RffSpec{10, 0.0}, 2, 1, 1), InvalidArgument);
    EXPECT_THROW(Potential::init(RffSpec{10, 1.0}, 2, 2, 1), InvalidArgument);
    EXPECT_THROW(Potential::init(MlpSpec{{0}}, 2, 1, 1), InvalidArgument);
    EXPECT_THROW(Potential::init(MlpSpec{}, 0, 1, 1), InvalidArgument);
}

TEST(Init, SeedDeterminism) {
    const auto a = Potential::init(MlpSpec{{16, 8}}, 3, 1, 42);
    const auto b = Potential::init(MlpSpec{{16, 8}}, 3, 1, 42);
    const auto c = Potential::init(MlpSpec{{16, 8}}, 3, 1, 43);
    EXPECT_EQ(a.parameters(), b.parameters());
    EXPECT_NE(a.parameters(), c.parameters());
}

TEST(Value, MlpZeroWeightsGivesOutputBias) {
    auto p = Potential::init(MlpSpec{{8, 4}}, 3, 1, 1);
    p.parameters().setZero();
    p.bias_mut((p.layer_widths().size() - 1) - 1)[0] = 3.0;
    std::mt19937_64 rng(2);
    for (int k = 0; k < 10; ++k) EXPECT_EQ(p.value(randn(3, rng)), 3.0);
}

TEST(Value, RffOneHotFeature) {
    const int K = 64;
    auto p = Potential::init(RffSpec{K, 1.0}, 2, 1, 3);
    Vector theta = Vector::Zero(K);
    theta[0] = 1.0;
    p.set_parameters(theta);
    // x on the line w_1 . x + b_1 = 0
    const Vector w = p.frequencies().row(0).transpose();
    const Vector x = -p.phases()[0] * w / w.squaredNorm();
    EXPECT_NEAR(p.value(x), std::sqrt(2.0 / K), 1e-14);
}

TEST(Value, MlpMatchesLoopImplementation) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = Potential::init(MlpSpec{{32, 16}}, 4, 1, rng());
        p.set_parameters(p.parameters() + 0.1 * randn(p.parameter_count(), rng));
        const Vector x = randn(4, rng);
        const double want = loop_forward(p, x);
        EXPECT_NEAR(p.value(x), want, 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST(Value, BatchMatchesSingle) {
    std::mt19937_64 rng(5);
    auto p = Potential::init(MlpSpec{{12, 7}}, 3, 1, 9);
    Matrix X(3, 10);
    for (int j = 0; j < 10; ++j) X.col(j) = randn(3, rng);
    const Vector v = p.values(X);
    for (int j = 0; j < 10; ++j) EXPECT_DOUBLE_EQ(v[j], p.value(X.col(j)));
    EXPECT_THROW((void)p.values(Matrix(2, 3)), DimensionError);
}

TEST(Value, RffBoundedByCoefficientMass) {
    std::mt19937_64 rng(6);
    auto p = Potential::init(RffSpec{100, 2.0}, 2, 1, 6);
    p.set_parameters(randn(100, rng));
    const double bound = p.parameters().cwiseAbs().sum() * std::sqrt(2.0 / 100);
    for (int k = 0; k < 1000; ++k) EXPECT_LE(std::abs(p.value(5.0 * randn(2, rng))), bound + 1e-12);
}

TEST(Value, MlpPiecewiseAffineAlongLines) {
    std::mt19937_64 rng(7);
    auto p = Potential::init(MlpSpec{{16, 16}}, 2, 1, 8);
    for (int k = 0; k < 50; ++k) {
        const Vector x = randn(2, rng);
        const Vector v = randn(2, rng);
        const double t = 1e-3;
        const auto base = cwb::testing::activation_pattern(p, x);
        if (cwb::testing::activation_pattern(p, Vector(x + t * v)) != base || cwb::testing::activation_pattern(p, Vector(x - t * v)) != base) continue;
        const double second = p.value(x + t * v) - 2.0 * p.value(x) + p.value(x - t * v);
        EXPECT_NEAR(second, 0.0, 1e-13);
    }
}

TEST(ParamGradient, RffClosedForm) {
    const int K = 32;
    std::mt19937_64 rng(8);
    auto p = Potential::init(RffSpec{K, 1.0}, 3, 1, 8);
    p.set_parameters(randn(K, rng));
    const Vector x = randn(3, rng);
    const Vector g = p.param_gradient(2.5, x);
    for (int k = 0; k < K; ++k) {
        const double want = 2.5 * std::sqrt(2.0 / K) * std::cos(p.frequencies().row(k).dot(x) + p.phases()[k]);
        EXPECT_NEAR(g[k], want, 1e-14);
    }
}

TEST(ParamGradient, ZeroUpstreamGivesZero) {
    auto p = Potential::init(MlpSpec{{8, 8}}, 2, 1, 9);
    EXPECT_EQ(p.param_gradient(0.0, Vector::Ones(2)), Vector::Zero(p.parameter_count()));
}

TEST(ParamGradient, FiniteDifferenceAgreement) {
    const auto mlp = cwb::testing::check_gradients(MlpSpec{{16, 32}}, 3, 100, 11);
    EXPECT_EQ(mlp.probes, 100);
    EXPECT_LE(mlp.worst_param, 1e-5);
    EXPECT_LE(mlp.worst_input, 1e-5);
    const auto rff = cwb::testing::check_gradients(RffSpec{256, 1.0}, 3, 100, 12);
    EXPECT_EQ(rff.probes, 100);
    EXPECT_LE(rff.worst_param, 1e-5);
    EXPECT_LE(rff.worst_input, 1e-5);
}

TEST(InputGradient, ZeroCoefficientsGiveZero) {
    auto p = Potential::init(MlpSpec{{8}}, 2, 1, 10);
    p.parameters().setZero();
    EXPECT_EQ(p.input_gradient(Vector::Ones(2)), Vector::Zero(2));
}

TEST(InputGradient, RffSingleFeatureSineFormula) {
    auto p = Potential::init(RffSpec{1, 1.0}, 2, 1, 11);
    p.set_parameters(Vector::Constant(1, 0.7));
    Vector x(2);
    x << 0.3, -0.4;
    const Vector w = p.frequencies().row(0).transpose();
    const Vector want = -0.7 * std::sqrt(2.0) * std::sin(w.dot(x) + p.phases()[0]) * w;
    EXPECT_LT((p.input_gradient(x) - want).norm(), 1e-14);
    const double h = 1e-5;
    for (int k = 0; k < 2; ++k) {
        Vector xp = x;
        Vector xm = x;
        xp[k] += h;
        xm[k] -= h;
        EXPECT_NEAR((p.value(xp) - p.value(xm)) / (2 * h), want[k], 1e-6);
    }
}

TEST(InputGradient, LinearFunctionThroughHiddenPath) {
    // relu(x) - relu(-x) = x per coordinate, so the net computes w . x
    auto p = Potential::init(MlpSpec{{4}}, 2, 1, 12);
    p.parameters().setZero();
    auto W0 = p.weight_mut(0);
    W0 << 1, 0, 0, 1, -1, 0, 0, -1;
    Vector w(2);
    w << 1.5, -2.0;
    auto W1 = p.weight_mut(1);
    W1 << w[0], w[1], -w[0], -w[1];
    std::mt19937_64 rng(13);
    for (int k = 0; k < 20; ++k) {
        const Vector x = randn(2, rng);
        EXPECT_NEAR(p.value(x), w.dot(x), 1e-14);
        EXPECT_LT((p.input_gradient(x) - w).norm(), 1e-15);
    }
}

TEST(InputGradient, KinkSubgradientIsZero) {
    auto p = Potential::init(MlpSpec{{1}}, 1, 1, 14);
    p.parameters().setZero();
    p.weight_mut(0)(0, 0) = 1.0;
    p.weight_mut(1)(0, 0) = 1.0;
    EXPECT_EQ(p.input_gradient(Vector::Zero(1))[0], 0.0);
    EXPECT_EQ(p.param_gradient(1.0, Vector::Zero(1))[0], 0.0);
}

TEST(VectorOutput, MongeShapeAndBackward) {
    std::mt19937_64 rng(15);
    auto p = Potential::init(MlpSpec{{8}}, 3, 3, 15);
    Matrix X(3, 5);
    for (int j = 0; j < 5; ++j) X.col(j) = randn(3, rng);
    Potential::Cache cache;
    const Matrix T = p.forward(X, cache);
    EXPECT_EQ(T.rows(), 3);
    EXPECT_EQ(T.cols(), 5);
    // gradient of sum(T) against finite differences
    Vector g = Vector::Zero(p.parameter_count());
    p.backward(cache, Matrix::Ones(3, 5), &g, nullptr);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < p.parameter_count(); k += 7) {
        Potential a = p;
        Potential b = p;
        a.parameters()[k] += h;
        b.parameters()[k] -= h;
        EXPECT_NEAR((a.forward(X).sum() - b.forward(X).sum()) / (2 * h), g[k], 1e-6);
    }
}

TEST(Serialization, RoundTripIsBitwise) {
    std::mt19937_64 rng(16);
    for (const PotentialSpec& spec : {PotentialSpec{MlpSpec{{9, 5}}}, PotentialSpec{RffSpec{33, 0.7}}}) {
        auto p = Potential::init(spec, 3, 1, 17);
        p.set_parameters(randn(p.parameter_count(), rng));
        const auto q = Potential::from_json(nlohmann::json::parse(p.to_json().dump()));
        EXPECT_EQ(q.parameters(), p.parameters());
        Matrix X(3, 20);
        for (int j = 0; j < 20; ++j) X.col(j) = randn(3, rng);
        const Vector a = p.values(X);
        const Vector b = q.values(X);
        EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * 20));
        EXPECT_EQ(q.seed(), 17u);
    }
}

TEST(Serialization, RejectsMalformed) {
    auto j = Potential::init(MlpSpec{{4}}, 2, 1, 1).to_json();
    auto bad = j;
    bad["version"] = 2;
    EXPECT_THROW(Potential::from_json(bad), IoError);
    bad = j;
    bad["parameters"].erase(0);
    EXPECT_THROW(Potential::from_json(bad), IoError);
    bad = j;
    bad["format"] = "other";
    EXPECT_THROW(Potential::from_json(bad), IoError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Vector theta = Vector::Zero(3);
    Vector g(3);
    g << 0.5, -2.0, 1e-3;
    AdamState st(3);
    AdamConfig cfg{1e-2, 0.9, 0.999, 1e-8};
    st.apply(theta, g, cfg, true);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(theta[k], 1e-2 * (g[k] > 0 ? 1.0 : -1.0), 1e-7);
    Vector phi = Vector::Zero(3);
    AdamState st2(3);
    st2.apply(phi, g, cfg, false);
    EXPECT_EQ(phi, -theta);
}
