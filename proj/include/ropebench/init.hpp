#pragma once

#include <random>

#include "ropebench/types.hpp"

namespace ropebench {

// Seeded uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Matrix fan_in_uniform(Index rows, Index cols, Index fan_in,
                      std::mt19937_64& rng);

// Seeded uniform in [-1, 1].
Matrix uniform_matrix(Index rows, Index cols, std::mt19937_64& rng);

}  // namespace ropebench
