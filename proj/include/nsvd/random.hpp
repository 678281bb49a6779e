#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "nsvd/matrix.hpp"

namespace nsvd {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Entries i.i.d. standard normal.
DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng);

/// rows x cols matrix with orthonormal columns (cols <= rows), obtained by
/// orthonormalizing a Gaussian matrix.
DenseMatrix random_orthonormal(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace nsvd
