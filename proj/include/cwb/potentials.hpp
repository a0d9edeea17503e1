#pragma once

// Parameterized scalar potentials (and vector-valued Monge map networks):
// random Fourier features with fixed frequencies, or a rectifier MLP.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cwb/types.hpp"

namespace cwb {

/// Random Fourier features: sum_k theta_k sqrt(2/K) cos(w_k . x + b_k), with
/// w_k ~ N(0, scale^2 I) and b_k ~ U[0, 2 pi) fixed at initialization.
struct RffSpec {
    int features = 2048;
    double scale = 1.0;
};

/// Fully connected network d -> hidden... -> out with rectifier activations.
struct MlpSpec {
    std::vector<int> hidden{128, 256};
};

using PotentialSpec = std::variant<RffSpec, MlpSpec>;

class Potential {
public:
    /// Activations kept by `forward` for a subsequent `backward`.
    struct Cache {
        Matrix input;
        std::vector<Matrix> pre;  // mlp: pre-activations of hidden layers; rff: phases
        std::vector<Matrix> act;  // mlp: hidden activations
    };

    Potential() = default;

    /// mlp: weights ~ N(0, 2/fan_in), biases zero. rff: theta = 0.
    static Potential init(const PotentialSpec& spec, int dim, int out, std::uint64_t seed) {
        if (dim < 1 || out < 1) throw InvalidArgument("potential: dimensions must be positive");
        Potential p;
        p.dim_ = dim;
        p.out_ = out;
        p.seed_ = seed;
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        if (const auto* rff = std::get_if<RffSpec>(&spec)) {
            if (rff->features < 1) throw InvalidArgument("rff: feature count must be positive");
            if (!(rff->scale > 0.0)) throw InvalidArgument("rff: frequency scale must be positive");
            if (out != 1) throw InvalidArgument("rff: only scalar outputs are supported");
            p.kind_ = Kind::rff;
            p.scale_ = rff->scale;
            p.frequencies_.resize(rff->features, dim);
            for (Eigen::Index k = 0; k < p.frequencies_.rows(); ++k) {
                for (Eigen::Index j = 0; j < dim; ++j) p.frequencies_(k, j) = rff->scale * normal(rng);
            }
            std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
            p.phases_.resize(rff->features);
            for (Eigen::Index k = 0; k < p.phases_.size(); ++k) p.phases_[k] = phase(rng);
            p.params_ = Vector::Zero(rff->features);
        } else {
            const auto& mlp = std::get<MlpSpec>(spec);
            p.kind_ = Kind::mlp;
            p.widths_.push_back(dim);
            for (int h : mlp.hidden) {
                if (h < 1) throw InvalidArgument("mlp: hidden widths must be positive");
                p.widths_.push_back(h);
            }
            p.widths_.push_back(out);
            p.build_offsets();
            p.params_ = Vector::Zero(p.offsets_.back());
            for (std::size_t l = 0; l + 1 < p.widths_.size(); ++l) {
                const double std_dev = std::sqrt(2.0 / p.widths_[l]);
                auto w = p.weight_mut(l);
                for (Eigen::Index j = 0; j < w.cols(); ++j) {
                    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = std_dev * normal(rng);
                }
            }
        }
        return p;
    }

    [[nodiscard]] bool is_rff() const { return kind_ == Kind::rff; }
    [[nodiscard]] bool is_mlp() const { return kind_ == Kind::mlp; }
    [[nodiscard]] int dim() const { return dim_; }
    [[nodiscard]] int out_dim() const { return out_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] Eigen::Index parameter_count() const { return params_.size(); }

    /// Flat trainable parameters. mlp layout: for each layer in order, the
    /// weight matrix (column-major, out x in) followed by its bias. rff: theta.
    [[nodiscard]] const Vector& parameters() const { return params_; }
    [[nodiscard]] Vector& parameters() { return params_; }

    void set_parameters(const Vector& p) {
        require_dim(p.size(), params_.size(), "set_parameters");
        params_ = p;
    }

    [[nodiscard]] const std::vector<int>& layer_widths() const { return widths_; }
    [[nodiscard]] const Matrix& frequencies() const { return frequencies_; }
    [[nodiscard]] const Vector& phases() const { return phases_; }
    [[nodiscard]] double frequency_scale() const { return scale_; }

    /// mlp only: views into the flat parameter vector.
    [[nodiscard]] Eigen::Map<Matrix> weight_mut(std::size_t layer) {
        return {params_.data() + offsets_[layer], widths_[layer + 1], widths_[layer]};
    }
    [[nodiscard]] Eigen::Map<Vector> bias_mut(std::size_t layer) {
        return {params_.data() + offsets_[layer] + widths_[layer + 1] * widths_[layer], widths_[layer + 1]};
    }
    [[nodiscard]] Eigen::Map<const Matrix> weight(std::size_t layer) const {
        return {params_.data() + offsets_[layer], widths_[layer + 1], widths_[layer]};
    }
    [[nodiscard]] Eigen::Map<const Vector> bias(std::size_t layer) const {
        return {params_.data() + offsets_[layer] + widths_[layer + 1] * widths_[layer], widths_[layer + 1]};
    }
    [[nodiscard]] std::size_t layer_count() const { return widths_.empty() ? 0 : widths_.size() - 1; }

    /// Outputs for a batch of points (one per column); out x N.
    [[nodiscard]] Matrix forward(const Matrix& X) const {
        Cache cache;
        return forward(X, cache);
    }

    [[nodiscard]] Matrix forward(const Matrix& X, Cache& cache) const {
        require_dim(X.rows(), dim_, "potential input");
        cache.input = X;
        cache.pre.clear();
        cache.act.clear();
        if (kind_ == Kind::rff) {
            Matrix phase = frequencies_ * X;
            phase.colwise() += phases_;
            Matrix out = (rff_norm() * params_.transpose()) * phase.array().cos().matrix();
            cache.pre.push_back(std::move(phase));
            return out;
        }
        const std::size_t L = layer_count();
        Matrix a = X;
        for (std::size_t l = 0; l < L; ++l) {
            Matrix z = weight(l) * a;
            z.colwise() += bias(l);
            if (l + 1 == L) return z;
            a = z.cwiseMax(0.0);
            cache.pre.push_back(std::move(z));
            cache.act.push_back(a);
        }
        return a;
    }

    /// Backpropagates sum_b <upstream_b, output_b>. The parameter gradient is
    /// added into `param_grad` when given; the input gradient (d x N) is
    /// written to `input_grad` when given.
    void backward(const Cache& cache, const Matrix& upstream, Vector* param_grad, Matrix* input_grad) const {
        require_dim(upstream.rows(), out_, "backward upstream rows");
        require_dim(upstream.cols(), cache.input.cols(), "backward upstream cols");
        if (param_grad) require_dim(param_grad->size(), params_.size(), "backward parameter gradient");
        if (kind_ == Kind::rff) {
            const Matrix& phase = cache.pre.front();
            if (param_grad) param_grad->noalias() += rff_norm() * (phase.array().cos().matrix() * upstream.transpose());
            if (input_grad) {
                Matrix s = phase.array().sin().matrix();
                s.array().colwise() *= (rff_norm() * params_).array();
                s.array().rowwise() *= upstream.row(0).array();
                input_grad->noalias() = -frequencies_.transpose() * s;
            }
            return;
        }
        const std::size_t L = layer_count();
        Matrix delta = upstream;
        for (std::size_t l = L; l-- > 0;) {
            const Matrix& prev = l == 0 ? cache.input : cache.act[l - 1];
            if (param_grad) {
                Eigen::Map<Matrix> gw(param_grad->data() + offsets_[l], widths_[l + 1], widths_[l]);
                Eigen::Map<Vector> gb(param_grad->data() + offsets_[l] + widths_[l + 1] * widths_[l], widths_[l + 1]);
                gw.noalias() += delta * prev.transpose();
                gb += delta.rowwise().sum();
            }
            if (l == 0) {
                if (input_grad) input_grad->noalias() = weight(0).transpose() * delta;
                break;
            }
            Matrix da = weight(l).transpose() * delta;
            delta = (cache.pre[l - 1].array() > 0.0).select(da, 0.0);
        }
    }

    [[nodiscard]] Vector values(const Matrix& X) const {
        if (out_ != 1) throw DimensionError("values: potential is not scalar-valued");
        return forward(X).row(0).transpose();
    }

    [[nodiscard]] double value(const Eigen::Ref<const Vector>& x) const {
        require_dim(x.size(), dim_, "value");
        return values(Matrix(x))[0];
    }

    /// Gradient of upstream * value(x) with respect to all parameters.
    [[nodiscard]] Vector param_gradient(double upstream, const Eigen::Ref<const Vector>& x) const {
        require_dim(x.size(), dim_, "param_gradient");
        Cache cache;
        (void)forward(Matrix(x), cache);
        Vector g = Vector::Zero(params_.size());
        backward(cache, Matrix::Constant(1, 1, upstream), &g, nullptr);
        return g;
    }

    /// Input gradients of a scalar potential at every column of X (d x N).
    [[nodiscard]] Matrix input_gradients(const Matrix& X) const {
        if (out_ != 1) throw DimensionError("input_gradients: potential is not scalar-valued");
        Cache cache;
        (void)forward(X, cache);
        Matrix g;
        backward(cache, Matrix::Ones(1, X.cols()), nullptr, &g);
        return g;
    }

    [[nodiscard]] Vector input_gradient(const Eigen::Ref<const Vector>& x) const {
        require_dim(x.size(), dim_, "input_gradient");
        return input_gradients(Matrix(x)).col(0);
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j;
        j["format"] = "cwb-potential";
        j["version"] = 1;
        j["dim"] = dim_;
        j["out"] = out_;
        j["seed"] = seed_;
        j["parameters"] = std::vector<double>(params_.data(), params_.data() + params_.size());
        if (kind_ == Kind::rff) {
            j["kind"] = "rff";
            j["features"] = frequencies_.rows();
            j["scale"] = scale_;
            std::vector<std::vector<double>> freqs(static_cast<std::size_t>(frequencies_.rows()));
            for (Eigen::Index k = 0; k < frequencies_.rows(); ++k) {
                for (Eigen::Index i = 0; i < frequencies_.cols(); ++i) freqs[static_cast<std::size_t>(k)].push_back(frequencies_(k, i));
            }
            j["frequencies"] = freqs;
            j["phases"] = std::vector<double>(phases_.data(), phases_.data() + phases_.size());
        } else {
            j["kind"] = "mlp";
            j["widths"] = widths_;
        }
        return j;
    }

    static Potential from_json(const nlohmann::json& j) {
        if (j.value("format", "") != "cwb-potential") throw IoError("potential: not a cwb-potential record");
        if (j.at("version").get<int>() != 1) throw IoError("potential: unsupported version " + j.at("version").dump());
        Potential p;
        p.dim_ = j.at("dim").get<int>();
        p.out_ = j.at("out").get<int>();
        p.seed_ = j.at("seed").get<std::uint64_t>();
        const auto params = j.at("parameters").get<std::vector<double>>();
        p.params_ = Eigen::Map<const Vector>(params.data(), static_cast<Eigen::Index>(params.size()));
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "rff") {
            p.kind_ = Kind::rff;
            p.scale_ = j.at("scale").get<double>();
            const auto freqs = j.at("frequencies").get<std::vector<std::vector<double>>>();
            const auto phases = j.at("phases").get<std::vector<double>>();
            const auto K = static_cast<Eigen::Index>(freqs.size());
            if (K != p.params_.size() || static_cast<Eigen::Index>(phases.size()) != K) {
                throw IoError("potential: rff shapes are inconsistent");
            }
            p.frequencies_.resize(K, p.dim_);
            for (Eigen::Index k = 0; k < K; ++k) {
                if (static_cast<int>(freqs[static_cast<std::size_t>(k)].size()) != p.dim_) throw IoError("potential: frequency dimension mismatch");
                for (int i = 0; i < p.dim_; ++i) p.frequencies_(k, i) = freqs[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
            }
            p.phases_ = Eigen::Map<const Vector>(phases.data(), K);
        } else if (kind == "mlp") {
            p.kind_ = Kind::mlp;
            p.widths_ = j.at("widths").get<std::vector<int>>();
            if (p.widths_.size() < 2 || p.widths_.front() != p.dim_ || p.widths_.back() != p.out_) {
                throw IoError("potential: mlp widths are inconsistent with dim/out");
            }
            p.build_offsets();
            if (p.offsets_.back() != p.params_.size()) throw IoError("potential: mlp parameter count mismatch");
        } else {
            throw IoError("potential: unknown kind '" + kind + "'");
        }
        if (!p.params_.allFinite()) throw IoError("potential: non-finite parameters");
        return p;
    }

private:
    enum class Kind { rff, mlp };

    [[nodiscard]] double rff_norm() const { return std::sqrt(2.0 / static_cast<double>(frequencies_.rows())); }

    void build_offsets() {
        offsets_.assign(1, 0);
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            offsets_.push_back(offsets_.back() + static_cast<Eigen::Index>(widths_[l + 1]) * (widths_[l] + 1));
        }
    }

    Kind kind_ = Kind::mlp;
    int dim_ = 0;
    int out_ = 1;
    std::uint64_t seed_ = 0;
    Vector params_;
    // mlp
    std::vector<int> widths_;
    std::vector<Eigen::Index> offsets_;
    // rff
    double scale_ = 1.0;
    Matrix frequencies_;  // K x d
    Vector phases_;
};

}  // namespace cwb
