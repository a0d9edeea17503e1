#pragma once

#include <cmath>

#include "cwb/types.hpp"

namespace cwb {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// First/second moment buffers for one flat parameter vector.
struct AdamState {
    Vector m;
    Vector v;
    long t = 0;

    explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}

    /// Bias-corrected Adam update. `ascent` moves along +grad.
    void apply(Vector& params, const Vector& grad, const AdamConfig& cfg, bool ascent) {
        require_dim(grad.size(), params.size(), "adam gradient");
        require_dim(m.size(), params.size(), "adam moments");
        ++t;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        const double sign = ascent ? 1.0 : -1.0;
        params.array() += sign * cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
    }
};

}  // namespace cwb
