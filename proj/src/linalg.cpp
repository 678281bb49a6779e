#include "nsvd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "nsvd/error.hpp"

namespace nsvd {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxSweeps = 80;

std::string shape_of(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// Column-major scratch buffer used by the Jacobi kernels.
struct ColumnMajor {
  std::size_t rows;
  std::size_t cols;
  std::vector<double> v;

  double* col(std::size_t j) { return v.data() + j * rows; }
  const double* col(std::size_t j) const { return v.data() + j * rows; }
};

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// Indices ordering `values` non-increasingly; ties keep kernel order.
std::vector<std::size_t> descending_order(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  return order;
}

// Adds orthonormal columns to u (m x r, first `filled` columns valid) until
// all r columns are set. Candidates are the standard basis vectors; the one
// with the largest residual after two Gram-Schmidt passes wins.
void complete_orthonormal(DenseMatrix& u, std::size_t filled) {
  const std::size_t m = u.rows();
  for (std::size_t col = filled; col < u.cols(); ++col) {
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < m; ++e) {
      std::vector<double> cand(m, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < col; ++c) {
          double s = 0.0;
          for (std::size_t i = 0; i < m; ++i) s += u(i, c) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= s * u(i, c);
        }
      }
      const double nrm = std::sqrt(dot(cand.data(), cand.data(), m));
      if (nrm > best_norm) {
        best_norm = nrm;
        best = std::move(cand);
      }
    }
    for (std::size_t i = 0; i < m; ++i) u(i, col) = best[i] / best_norm;
  }
}

// One-sided Jacobi on a tall (rows >= cols) matrix.
SvdFactors jacobi_svd_tall(const DenseMatrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  ColumnMajor w{m, n, std::vector<double>(m * n)};
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) w.col(j)[i] = a(i, j);
  ColumnMajor v{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  const double fro = frobenius_norm(a);
  const double negligible = (kEps * fro) * (kEps * fro);
  const double tol = kEps * static_cast<double>(std::max<std::size_t>(m, 4));

  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = w.col(p);
        double* wq = w.col(q);
        const double alpha = dot(wp, wp, m);
        const double beta = dot(wq, wq, m);
        const double gamma = dot(wp, wq, m);
        if (alpha <= negligible || beta <= negligible) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = wp[i];
          wp[i] = c * x - s * wq[i];
          wq[i] = s * x + c * wq[i];
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i];
          vp[i] = c * x - s * vq[i];
          vq[i] = s * x + c * vq[i];
        }
      }
    }
  }
  if (!converged) {
    throw DecompositionError("SVD failed to converge for " + shape_of(m, n) + " matrix");
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(dot(w.col(j), w.col(j), m));
  const auto order = descending_order(norms);
  const double sigma_max = norms.empty() ? 0.0 : norms[order.front()];
  const double zero_cut = sigma_max * kEps * static_cast<double>(std::max(m, n));

  SvdFactors out{DenseMatrix(m, n), std::vector<double>(n), DenseMatrix(n, n)};
  std::size_t filled = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t j = order[r];
    out.sigma[r] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.vt(r, i) = v.col(j)[i];
    if (norms[j] > zero_cut && norms[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, r) = w.col(j)[i] / norms[j];
      filled = r + 1;
    }
  }
  complete_orthonormal(out.u, filled);
  return out;
}

}  // namespace

DenseMatrix SvdFactors::reconstruct() const {
  return scale_columns(u, sigma) * vt;
}

SvdFactors SvdFactors::truncated(std::size_t k) const {
  if (k == 0 || k > sigma.size()) {
    throw ArgumentError("truncation rank " + std::to_string(k) + " outside [1, " +
                        std::to_string(sigma.size()) + "]");
  }
  return SvdFactors{u.block(0, 0, u.rows(), k),
                    std::vector<double>(sigma.begin(), sigma.begin() + static_cast<std::ptrdiff_t>(k)),
                    vt.block(0, 0, k, vt.cols())};
}

SvdFactors svd(const DenseMatrix& a) {
  if (a.rows() >= a.cols()) return jacobi_svd_tall(a);
  SvdFactors t = jacobi_svd_tall(a.transpose());
  return SvdFactors{t.vt.transpose(), std::move(t.sigma), t.u.transpose()};
}

double tail_norm(std::span<const double> sigma, std::size_t k) {
  double s = 0.0;
  // Smallest first for accuracy.
  for (std::size_t i = sigma.size(); i > k; --i) s += sigma[i - 1] * sigma[i - 1];
  return std::sqrt(s);
}

TruncatedSvd tsvd(const DenseMatrix& a, std::size_t k) {
  const std::size_t r = std::min(a.rows(), a.cols());
  if (k == 0 || k > r) {
    throw ArgumentError("tsvd rank " + std::to_string(k) + " outside [1, " + std::to_string(r) +
                        "] for " + shape_of(a.rows(), a.cols()) + " matrix");
  }
  SvdFactors full = svd(a);
  const double loss = tail_norm(full.sigma, k);
  return TruncatedSvd{full.truncated(k), loss};
}

double asymmetry(const DenseMatrix& g) {
  if (g.rows() != g.cols()) return std::numeric_limits<double>::infinity();
  const double scale = std::max(max_abs(g), std::numeric_limits<double>::min());
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) worst = std::max(worst, std::abs(g(i, j) - g(j, i)));
  return worst / scale;
}

DenseMatrix cholesky(const DenseMatrix& g, double damping) {
  if (g.rows() != g.cols()) {
    throw ArgumentError("cholesky: matrix is " + shape_of(g.rows(), g.cols()) + ", not square");
  }
  if (!(damping >= 0.0) || !std::isfinite(damping)) {
    throw ArgumentError("cholesky: damping must be a finite nonnegative number");
  }
  if (asymmetry(g) > 1e-10) throw ArgumentError("cholesky: matrix is not symmetric");

  const std::size_t n = g.rows();
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double diag = g(j, j) + damping;
    double d = diag;
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    const double pivot_floor = 4.0 * static_cast<double>(n) * kEps * std::max(diag, 0.0);
    if (!(d > pivot_floor)) {
      throw NotPositiveDefiniteError(
          "cholesky: matrix is not positive definite at pivot " + std::to_string(j) +
              " (pivot value " + std::to_string(d) + ")",
          j);
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = 0.5 * (g(i, j) + g(j, i));
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

std::vector<double> EigFactors::clamped_lambda() const {
  std::vector<double> out = lambda;
  const double top = lambda.empty() ? 0.0 : std::max(lambda.front(), 0.0);
  for (double& v : out) {
    if (v < 0.0 && -v <= 1e-12 * top) v = 0.0;
  }
  return out;
}

DenseMatrix EigFactors::reconstruct() const {
  return multiply_bt(scale_columns(p, lambda), p);
}

EigFactors eig_sym(const DenseMatrix& g) {
  if (g.rows() != g.cols()) {
    throw ArgumentError("eig_sym: matrix is " + shape_of(g.rows(), g.cols()) + ", not square");
  }
  if (asymmetry(g) > 1e-10) throw ArgumentError("eig_sym: matrix is not symmetric");

  const std::size_t n = g.rows();
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (g(i, j) + g(j, i));
  DenseMatrix v = DenseMatrix::identity(n);

  const double floor = static_cast<double>(n) * kEps * frobenius_norm(a);
  const double tol = kEps;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= floor) continue;
        if (std::abs(apq) <= tol * std::sqrt(std::abs(a(p, p)) * std::abs(a(q, q)))) continue;
        converged = false;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t =
            std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const double app = a(p, p);
        const double aqq = a(q, q);
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = a(p, k) = c * akp - s * akq;
          a(k, q) = a(q, k) = s * akp + c * akq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) {
    throw DecompositionError("symmetric eigendecomposition failed to converge for " +
                             shape_of(n, n) + " matrix");
  }

  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  const auto order = descending_order(diag);
  EigFactors out{DenseMatrix(n, n), std::vector<double>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    out.lambda[r] = diag[order[r]];
    for (std::size_t k = 0; k < n; ++k) out.p(k, r) = v(k, order[r]);
  }
  return out;
}

IdFactors column_id(const DenseMatrix& a, std::size_t k) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (k == 0 || k > n) {
    throw ArgumentError("column_id rank " + std::to_string(k) + " outside [1, " +
                        std::to_string(n) + "]");
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  if (k == n) {
    return IdFactors{perm, DenseMatrix::identity(n), 0.0};
  }

  DenseMatrix r = a;
  const std::size_t steps = std::min(k, m);
  std::vector<double> hv(m);
  for (std::size_t j = 0; j < k; ++j) {
    // Greedy pivot: largest residual column norm, recomputed from scratch.
    std::size_t best = j;
    double best_norm = -1.0;
    for (std::size_t c = j; c < n; ++c) {
      double s = 0.0;
      for (std::size_t i = j; i < m; ++i) s += r(i, c) * r(i, c);
      if (s > best_norm) {
        best_norm = s;
        best = c;
      }
    }
    if (best != j) {
      for (std::size_t i = 0; i < m; ++i) std::swap(r(i, j), r(i, best));
      std::swap(perm[j], perm[best]);
    }
    if (j >= steps) continue;

    const double xnorm = std::sqrt(best_norm);
    if (xnorm == 0.0) continue;
    const double alpha = -std::copysign(xnorm, r(j, j));
    double vnorm2 = 0.0;
    for (std::size_t i = j; i < m; ++i) {
      hv[i] = r(i, j);
      if (i == j) hv[i] -= alpha;
      vnorm2 += hv[i] * hv[i];
    }
    if (vnorm2 == 0.0) continue;
    for (std::size_t c = j + 1; c < n; ++c) {
      double s = 0.0;
      for (std::size_t i = j; i < m; ++i) s += hv[i] * r(i, c);
      const double f = 2.0 * s / vnorm2;
      for (std::size_t i = j; i < m; ++i) r(i, c) -= f * hv[i];
    }
    r(j, j) = alpha;
    for (std::size_t i = j + 1; i < m; ++i) r(i, j) = 0.0;
  }

  // Solve R11 z = R[:, c] for every non-pivot column; pivot columns map to I.
  DenseMatrix interp(k, n);
  const double r00 = std::abs(r(0, 0));
  const double diag_cut = r00 * kEps * static_cast<double>(std::max(m, n));
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = perm[c];
    if (c < k) {
      interp(c, src) = 1.0;
      continue;
    }
    std::vector<double> z(k, 0.0);
    for (std::size_t ii = steps; ii > 0; --ii) {
      const std::size_t i = ii - 1;
      double s = r(i, c);
      for (std::size_t t = i + 1; t < steps; ++t) s -= r(i, t) * z[t];
      const double d = r(i, i);
      z[i] = (std::abs(d) > diag_cut && d != 0.0) ? s / d : 0.0;
    }
    for (std::size_t i = 0; i < k; ++i) interp(i, src) = z[i];
  }

  IdFactors out{std::vector<std::size_t>(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k)),
                std::move(interp), 0.0};
  out.residual = frobenius_norm(a - out.skeleton(a) * out.interp);
  return out;
}

}  // namespace nsvd
