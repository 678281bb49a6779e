#include "nsvd/random.hpp"

#include <cmath>

#include "nsvd/error.hpp"

namespace nsvd {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

DenseMatrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

DenseMatrix random_orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
  if (cols > rows) throw ArgumentError("random_orthonormal: more columns than rows");
  DenseMatrix q = gaussian_matrix(rows, cols, rng);
  // Modified Gram-Schmidt, two passes.
  for (std::size_t j = 0; j < cols; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < j; ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += q(i, c) * q(i, j);
        for (std::size_t i = 0; i < rows; ++i) q(i, j) -= s * q(i, c);
      }
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) nrm += q(i, j) * q(i, j);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < rows; ++i) q(i, j) /= nrm;
  }
  return q;
}

}  // namespace nsvd
