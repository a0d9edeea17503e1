#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

#include "cwb/error.hpp"

namespace cwb {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Point sets are stored one point per column (d x N).
using PointSet = Eigen::MatrixXd;

using Rng = std::mt19937_64;

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected dimension " + std::to_string(want) +
                             ", got " + std::to_string(got));
    }
}

/// Splits a stream into an independent child stream; used so that every
/// logical worker owns its own generator.
inline Rng fork(Rng& parent) {
    std::seed_seq seq{parent(), parent(), parent(), parent()};
    return Rng(seq);
}

}  // namespace cwb
