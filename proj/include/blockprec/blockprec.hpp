#pragma once

// Block-diagonal preconditioned gradient descent with static and randomized
// partitioning, plus the spectral quantities that govern its convergence.

#include "blockprec/data.hpp"
#include "blockprec/error.hpp"
#include "blockprec/matrix.hpp"
#include "blockprec/objectives.hpp"
#include "blockprec/parallel.hpp"
#include "blockprec/partition.hpp"
#include "blockprec/random.hpp"
#include "blockprec/solver.hpp"
#include "blockprec/spectral.hpp"
