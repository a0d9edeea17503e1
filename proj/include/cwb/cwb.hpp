#pragma once

#include "cwb/adam.hpp"
#include "cwb/baselines.hpp"
#include "cwb/dual_solver.hpp"
#include "cwb/error.hpp"
#include "cwb/evaluation.hpp"
#include "cwb/experiment.hpp"
#include "cwb/measures.hpp"
#include "cwb/potentials.hpp"
#include "cwb/recovery.hpp"
#include "cwb/regularization.hpp"
#include "cwb/runtime.hpp"
#include "cwb/types.hpp"
