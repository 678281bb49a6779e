#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "nsvd/linalg.hpp"
#include "nsvd/matrix.hpp"

namespace nsvd {

/// Streaming accumulator for the activation Gram matrix X X^T.
///
/// Batches are n x b blocks of activation columns. Every Gram entry is a
/// compensated (Neumaier) sum over all columns seen so far, so the result does
/// not depend on how the columns were split into batches beyond round-off of
/// the compensation term. Per-row absolute sums are kept alongside for the
/// diagonal absolute-mean whitener.
class GramStats {
 public:
  explicit GramStats(std::size_t dim);

  /// Restores a previously accumulated state (e.g. read back from disk).
  static GramStats from_parts(DenseMatrix gram, std::vector<double> abs_sums,
                              std::uint64_t sample_count);

  void accumulate(const DenseMatrix& batch);
  /// Associative merge of two independently accumulated statistics.
  void merge(const GramStats& other);

  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t sample_count() const noexcept { return count_; }
  DenseMatrix gram() const;
  const std::vector<double>& abs_sums() const noexcept { return abs_sum_; }

 private:
  std::size_t dim_;
  std::uint64_t count_ = 0;
  // Lower triangle (packed row-wise) of the running sum and its compensation.
  std::vector<double> sum_;
  std::vector<double> comp_;
  std::vector<double> abs_sum_;
  std::vector<double> abs_comp_;
};

/// Functional form: returns stats with `batch` folded in.
GramStats gram_accumulate(GramStats stats, const DenseMatrix& batch);

enum class WhitenerKind { kDiagAbsMean, kCholesky, kEigenSqrt, kEigenGamma };

std::string_view to_string(WhitenerKind kind);

enum class InversePolicy { kExact, kPseudoInverse };

/// Right transform S used to whiten a weight matrix (A -> A S) together with
/// its inverse or pseudo-inverse.
class Whitener {
 public:
  static Whitener diag_abs_mean(std::vector<double> scales, std::uint64_t fingerprint);
  static Whitener from_cholesky(DenseMatrix lower, double damping, std::uint64_t fingerprint);
  static Whitener eigen_sqrt(EigFactors eig, double tau, std::uint64_t fingerprint);
  static Whitener eigen_gamma(EigFactors eig, std::uint64_t fingerprint);

  WhitenerKind kind() const noexcept { return kind_; }
  InversePolicy inverse_policy() const noexcept { return policy_; }
  std::size_t dim() const noexcept { return dim_; }

  /// A * S.
  DenseMatrix apply_right(const DenseMatrix& a) const;
  /// B * S^{-1} (or B * S^+ under the pseudo-inverse policy).
  DenseMatrix apply_inverse_right(const DenseMatrix& b) const;
  /// S as a dense matrix.
  DenseMatrix dense() const;

  double damping() const noexcept { return damping_; }
  double tau() const noexcept { return tau_; }
  double gamma() const noexcept { return gamma_; }
  /// Number of modes zeroed by the pseudo-inverse (eigen-sqrt only).
  std::size_t dropped_modes() const noexcept { return dropped_; }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }

  const std::vector<double>& diag() const noexcept { return diag_; }
  /// Eigenvalues of the Gram (eigen kinds), clamped at zero.
  const std::vector<double>& eigenvalues() const noexcept { return lambda_; }
  /// Eigenvector basis P (eigen kinds).
  const std::optional<DenseMatrix>& basis() const noexcept { return basis_; }
  /// Cholesky factor (cholesky kind).
  const std::optional<DenseMatrix>& lower() const noexcept { return lower_; }

 private:
  Whitener() = default;

  WhitenerKind kind_ = WhitenerKind::kCholesky;
  InversePolicy policy_ = InversePolicy::kExact;
  std::size_t dim_ = 0;
  std::vector<double> diag_;
  std::optional<DenseMatrix> lower_;
  std::optional<DenseMatrix> basis_;
  std::vector<double> lambda_;
  std::vector<double> scale_;      // sqrt(lambda) (eigen-sqrt)
  std::vector<double> inv_scale_;  // 1/sqrt(lambda) or 0 for dropped modes
  double gamma_ = 0.0;
  double damping_ = 0.0;
  double tau_ = 0.0;
  std::size_t dropped_ = 0;
  std::uint64_t fingerprint_ = 0;
};

inline constexpr double kDefaultTau = 1e-10;

/// Diagonal whitener s_ii = mean_j |x_ij|; zero entries become 1e-12 max(s)
/// (or 1e-12 when every entry is zero).
Whitener whitener_diag_absmean(const DenseMatrix& x);
Whitener whitener_diag_absmean(const GramStats& stats);

/// Cholesky factor of the Gram, escalating damping through
/// {0, 1e-10, 1e-8, 1e-6} * mean(diag) until the factorization succeeds.
Whitener whitener_cholesky(const GramStats& stats);

enum class EigenVariant { kSqrt, kGamma };

/// kSqrt: S = P diag(sqrt(lambda)), modes with lambda <= tau * max(lambda)
/// are zeroed by the pseudo-inverse. kGamma: S = gamma P with
/// gamma = max(sqrt(lambda)); its inverse P^T / gamma is always exact.
Whitener whitener_eigen(const GramStats& stats, EigenVariant variant, double tau = kDefaultTau);

/// 64-bit FNV-1a over the little-endian bytes of the Gram entries.
std::uint64_t gram_fingerprint(const DenseMatrix& gram);

}  // namespace nsvd
