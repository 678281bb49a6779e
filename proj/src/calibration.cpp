#include "nsvd/calibration.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "nsvd/error.hpp"

namespace nsvd {

namespace {

std::size_t packed_index(std::size_t i, std::size_t j) { return i * (i + 1) / 2 + j; }

// Neumaier compensated add.
inline void compensated_add(double& sum, double& comp, double x) {
  const double t = sum + x;
  if (std::abs(sum) >= std::abs(x)) {
    comp += (sum - t) + x;
  } else {
    comp += (x - t) + sum;
  }
  sum = t;
}

double max_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

}  // namespace

GramStats::GramStats(std::size_t dim)
    : dim_(dim),
      sum_(dim * (dim + 1) / 2, 0.0),
      comp_(dim * (dim + 1) / 2, 0.0),
      abs_sum_(dim, 0.0),
      abs_comp_(dim, 0.0) {
  if (dim == 0) throw ArgumentError("GramStats: dimension must be positive");
}

GramStats GramStats::from_parts(DenseMatrix gram, std::vector<double> abs_sums,
                                std::uint64_t sample_count) {
  if (gram.rows() != gram.cols()) throw ArgumentError("GramStats: gram must be square");
  if (abs_sums.size() != gram.rows()) {
    throw ArgumentError("GramStats: abs-sum length does not match gram dimension");
  }
  if (asymmetry(gram) > 1e-10) throw ArgumentError("GramStats: gram is not symmetric");
  GramStats s(gram.rows());
  for (std::size_t i = 0; i < s.dim_; ++i)
    for (std::size_t j = 0; j <= i; ++j) s.sum_[packed_index(i, j)] = gram(i, j);
  s.abs_sum_ = std::move(abs_sums);
  s.count_ = sample_count;
  return s;
}

void GramStats::accumulate(const DenseMatrix& batch) {
  if (batch.rows() != dim_) {
    throw ArgumentError("gram_accumulate: batch has " + std::to_string(batch.rows()) +
                        " rows, expected " + std::to_string(dim_));
  }
  const std::size_t b = batch.cols();
  for (std::size_t i = 0; i < dim_; ++i) {
    auto xi = batch.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      auto xj = batch.row(j);
      double& s = sum_[packed_index(i, j)];
      double& c = comp_[packed_index(i, j)];
      for (std::size_t col = 0; col < b; ++col) compensated_add(s, c, xi[col] * xj[col]);
    }
    for (std::size_t col = 0; col < b; ++col)
      compensated_add(abs_sum_[i], abs_comp_[i], std::abs(xi[col]));
  }
  count_ += b;
}

void GramStats::merge(const GramStats& other) {
  if (other.dim_ != dim_) {
    throw ArgumentError("GramStats::merge: dimension " + std::to_string(other.dim_) +
                        " differs from " + std::to_string(dim_));
  }
  for (std::size_t t = 0; t < sum_.size(); ++t) {
    compensated_add(sum_[t], comp_[t], other.sum_[t]);
    comp_[t] += other.comp_[t];
  }
  for (std::size_t i = 0; i < dim_; ++i) {
    compensated_add(abs_sum_[i], abs_comp_[i], other.abs_sum_[i]);
    abs_comp_[i] += other.abs_comp_[i];
  }
  count_ += other.count_;
}

DenseMatrix GramStats::gram() const {
  DenseMatrix g(dim_, dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const std::size_t t = packed_index(i, j);
      g(i, j) = g(j, i) = sum_[t] + comp_[t];
    }
  }
  return g;
}

GramStats gram_accumulate(GramStats stats, const DenseMatrix& batch) {
  stats.accumulate(batch);
  return stats;
}

std::string_view to_string(WhitenerKind kind) {
  switch (kind) {
    case WhitenerKind::kDiagAbsMean: return "diag-absmean";
    case WhitenerKind::kCholesky: return "cholesky";
    case WhitenerKind::kEigenSqrt: return "eigen-sqrt";
    case WhitenerKind::kEigenGamma: return "eigen-gamma";
  }
  return "unknown";
}

std::uint64_t gram_fingerprint(const DenseMatrix& gram) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : gram.values()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Whitener Whitener::diag_abs_mean(std::vector<double> scales, std::uint64_t fingerprint) {
  if (scales.empty()) throw ArgumentError("diag whitener: empty scale vector");
  const double top = max_of(scales);
  const double eps = top > 0.0 ? 1e-12 * top : 1e-12;
  for (double& s : scales) {
    if (!(s > 0.0)) s = eps;
  }
  Whitener w;
  w.kind_ = WhitenerKind::kDiagAbsMean;
  w.dim_ = scales.size();
  w.diag_ = std::move(scales);
  w.fingerprint_ = fingerprint;
  return w;
}

Whitener Whitener::from_cholesky(DenseMatrix lower, double damping, std::uint64_t fingerprint) {
  if (lower.rows() != lower.cols()) throw ArgumentError("cholesky whitener: factor not square");
  Whitener w;
  w.kind_ = WhitenerKind::kCholesky;
  w.dim_ = lower.rows();
  w.lower_ = std::move(lower);
  w.damping_ = damping;
  w.fingerprint_ = fingerprint;
  return w;
}

Whitener Whitener::eigen_sqrt(EigFactors eig, double tau, std::uint64_t fingerprint) {
  if (!(tau >= 0.0)) throw ArgumentError("eigen whitener: tau must be nonnegative");
  std::vector<double> lambda = eig.clamped_lambda();
  for (double& l : lambda) l = std::max(l, 0.0);
  const double top = max_of(lambda);
  Whitener w;
  w.kind_ = WhitenerKind::kEigenSqrt;
  w.policy_ = InversePolicy::kPseudoInverse;
  w.dim_ = lambda.size();
  w.tau_ = tau;
  w.scale_.resize(lambda.size());
  w.inv_scale_.resize(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    w.scale_[i] = std::sqrt(lambda[i]);
    if (lambda[i] > tau * top && lambda[i] > 0.0) {
      w.inv_scale_[i] = 1.0 / w.scale_[i];
    } else {
      w.inv_scale_[i] = 0.0;
      ++w.dropped_;
    }
  }
  if (w.dropped_ == lambda.size()) {
    throw DegenerateInputError("eigen whitener: every eigenvalue is at or below tau * max (tau = " +
                               std::to_string(tau) + ")");
  }
  w.lambda_ = std::move(lambda);
  w.basis_ = std::move(eig.p);
  w.fingerprint_ = fingerprint;
  return w;
}

Whitener Whitener::eigen_gamma(EigFactors eig, std::uint64_t fingerprint) {
  std::vector<double> lambda = eig.clamped_lambda();
  for (double& l : lambda) l = std::max(l, 0.0);
  const double top = max_of(lambda);
  if (!(top > 0.0)) throw DegenerateInputError("gamma whitener: Gram has no positive eigenvalue");
  Whitener w;
  w.kind_ = WhitenerKind::kEigenGamma;
  w.dim_ = lambda.size();
  w.gamma_ = std::sqrt(top);
  w.lambda_ = std::move(lambda);
  w.basis_ = std::move(eig.p);
  w.fingerprint_ = fingerprint;
  return w;
}

DenseMatrix Whitener::apply_right(const DenseMatrix& a) const {
  if (a.cols() != dim_) {
    throw ArgumentError("whitener: matrix has " + std::to_string(a.cols()) +
                        " columns, whitener dimension is " + std::to_string(dim_));
  }
  switch (kind_) {
    case WhitenerKind::kDiagAbsMean: return scale_columns(a, diag_);
    case WhitenerKind::kCholesky: return a * *lower_;
    case WhitenerKind::kEigenSqrt: return scale_columns(a * *basis_, scale_);
    case WhitenerKind::kEigenGamma: return gamma_ * (a * *basis_);
  }
  return a;
}

DenseMatrix Whitener::apply_inverse_right(const DenseMatrix& b) const {
  if (b.cols() != dim_) {
    throw ArgumentError("whitener: matrix has " + std::to_string(b.cols()) +
                        " columns, whitener dimension is " + std::to_string(dim_));
  }
  switch (kind_) {
    case WhitenerKind::kDiagAbsMean: {
      std::vector<double> inv(dim_);
      for (std::size_t i = 0; i < dim_; ++i) inv[i] = 1.0 / diag_[i];
      return scale_columns(b, inv);
    }
    case WhitenerKind::kCholesky: {
      // Y L = B, row by row: back-substitution against L^T.
      const DenseMatrix& l = *lower_;
      DenseMatrix y(b.rows(), dim_);
      for (std::size_t r = 0; r < b.rows(); ++r) {
        auto br = b.row(r);
        auto yr = y.row(r);
        for (std::size_t jj = dim_; jj > 0; --jj) {
          const std::size_t j = jj - 1;
          double s = br[j];
          for (std::size_t i = j + 1; i < dim_; ++i) s -= yr[i] * l(i, j);
          yr[j] = s / l(j, j);
        }
      }
      return y;
    }
    case WhitenerKind::kEigenSqrt: return multiply_bt(scale_columns(b, inv_scale_), *basis_);
    case WhitenerKind::kEigenGamma: return (1.0 / gamma_) * multiply_bt(b, *basis_);
  }
  return b;
}

DenseMatrix Whitener::dense() const {
  return apply_right(DenseMatrix::identity(dim_));
}

Whitener whitener_diag_absmean(const DenseMatrix& x) {
  GramStats stats(x.rows());
  stats.accumulate(x);
  return whitener_diag_absmean(stats);
}

Whitener whitener_diag_absmean(const GramStats& stats) {
  if (stats.sample_count() == 0) {
    throw ArgumentError("diag whitener: no calibration samples accumulated");
  }
  std::vector<double> s = stats.abs_sums();
  const double p = static_cast<double>(stats.sample_count());
  for (double& v : s) v /= p;
  return Whitener::diag_abs_mean(std::move(s), gram_fingerprint(stats.gram()));
}

Whitener whitener_cholesky(const GramStats& stats) {
  if (stats.sample_count() == 0) {
    throw ArgumentError("cholesky whitener: no calibration samples accumulated");
  }
  const DenseMatrix g = stats.gram();
  double mean_diag = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) mean_diag += g(i, i);
  mean_diag /= static_cast<double>(g.rows());

  constexpr double kLadder[] = {0.0, 1e-10, 1e-8, 1e-6};
  std::size_t last_pivot = 0;
  for (double level : kLadder) {
    const double damping = level * mean_diag;
    try {
      return Whitener::from_cholesky(cholesky(g, damping), damping, gram_fingerprint(g));
    } catch (const NotPositiveDefiniteError& e) {
      last_pivot = e.pivot();
    }
  }
  throw NotPositiveDefiniteError(
      "cholesky whitener: Gram is not positive definite even with damping 1e-6 * mean(diag); "
      "failing pivot " + std::to_string(last_pivot),
      last_pivot);
}

Whitener whitener_eigen(const GramStats& stats, EigenVariant variant, double tau) {
  if (stats.sample_count() == 0) {
    throw ArgumentError("eigen whitener: no calibration samples accumulated");
  }
  const DenseMatrix g = stats.gram();
  EigFactors eig = eig_sym(g);
  const std::uint64_t fp = gram_fingerprint(g);
  if (variant == EigenVariant::kGamma) return Whitener::eigen_gamma(std::move(eig), fp);
  return Whitener::eigen_sqrt(std::move(eig), tau, fp);
}

}  // namespace nsvd
