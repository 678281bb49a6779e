#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nsvd/matrix.hpp"

namespace nsvd {

/// Thin SVD a = u * diag(sigma) * vt with r = min(rows, cols).
///
/// sigma is non-increasing. Columns of u and rows of vt are orthonormal,
/// including the directions belonging to (numerically) zero singular values.
struct SvdFactors {
  DenseMatrix u;
  std::vector<double> sigma;
  DenseMatrix vt;

  std::size_t rank_capacity() const noexcept { return sigma.size(); }
  DenseMatrix reconstruct() const;
  /// Leading k singular triplets.
  SvdFactors truncated(std::size_t k) const;
};

struct TruncatedSvd {
  SvdFactors factors;
  /// ||a - a_k||_F, i.e. the 2-norm of the discarded singular values.
  double loss;
};

/// Symmetric eigendecomposition g = p * diag(lambda) * p^T, lambda non-increasing.
struct EigFactors {
  DenseMatrix p;
  std::vector<double> lambda;

  /// lambda with round-off negatives (|v| <= 1e-12 max) set to zero.
  std::vector<double> clamped_lambda() const;
  DenseMatrix reconstruct() const;
};

/// Column interpolative decomposition: a ~= a[:, column_indices] * interp.
struct IdFactors {
  std::vector<std::size_t> column_indices;
  DenseMatrix interp;
  /// ||a - skeleton * interp||_F, measured at construction.
  double residual;

  DenseMatrix skeleton(const DenseMatrix& source) const {
    return source.select_columns(column_indices);
  }
};

SvdFactors svd(const DenseMatrix& a);
TruncatedSvd tsvd(const DenseMatrix& a, std::size_t k);

/// sqrt(sum_{i >= k} sigma_i^2), zero-based k.
double tail_norm(std::span<const double> sigma, std::size_t k);

/// Lower-triangular L with L L^T = g + damping I.
/// Throws NotPositiveDefiniteError with the failing pivot when a pivot is not
/// safely positive.
DenseMatrix cholesky(const DenseMatrix& g, double damping = 0.0);

EigFactors eig_sym(const DenseMatrix& g);

/// Greedy column-pivoted Householder QR picks k skeleton columns; the
/// interpolation matrix is the least-squares fit of a against them.
IdFactors column_id(const DenseMatrix& a, std::size_t k);

/// Max |g_ij - g_ji| relative to max |g_ij|.
double asymmetry(const DenseMatrix& g);

}  // namespace nsvd
