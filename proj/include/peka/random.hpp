#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "peka/matrix.hpp"

namespace peka {

using Rng = std::mt19937_64;

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev);
Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi);
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

/// Derives an independent stream seed from a base seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace peka
