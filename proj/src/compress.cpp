#include "nsvd/compress.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nsvd/error.hpp"
#include "nsvd/linalg.hpp"

namespace nsvd {

namespace {

void require_rank(const DenseMatrix& a, std::size_t k) {
  const std::size_t r = std::min(a.rows(), a.cols());
  if (k == 0 || k > r) {
    throw ArgumentError("rank " + std::to_string(k) + " outside [1, " + std::to_string(r) +
                        "] for a " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " matrix");
  }
}

RankBudget flat_budget(const RankBudget& b) {
  return RankBudget{b.ratio, b.k, 1.0, b.k, 0};
}

Method flat_method(WhitenerKind kind) {
  switch (kind) {
    case WhitenerKind::kDiagAbsMean: return Method::kAsvd0;
    case WhitenerKind::kCholesky: return Method::kAsvd1;
    case WhitenerKind::kEigenSqrt: return Method::kAsvd2;
    case WhitenerKind::kEigenGamma: return Method::kAsvd3;
  }
  return Method::kAsvd1;
}

// Accumulating product used by apply(); counts multiply-adds.
DenseMatrix counted_product(const DenseMatrix& a, const DenseMatrix& b, ApplyCounters* counters) {
  if (counters) counters->multiply_adds += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
  return a * b;
}

FactorPair activation_aware_stage(const DenseMatrix& a, const Whitener& w, std::size_t k) {
  const TruncatedSvd t = tsvd(w.apply_right(a), k);
  return FactorPair{scale_columns(t.factors.u, t.factors.sigma),
                    w.apply_inverse_right(t.factors.vt)};
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kSvd: return "svd";
    case Method::kAsvd0: return "asvd0";
    case Method::kAsvd1: return "asvd1";
    case Method::kAsvd2: return "asvd2";
    case Method::kAsvd3: return "asvd3";
    case Method::kNsvd1: return "nsvd1";
    case Method::kNsvd2: return "nsvd2";
    case Method::kNid1: return "nid1";
    case Method::kNid2: return "nid2";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view tag) {
  for (Method m : kAllMethods) {
    if (to_string(m) == tag) return m;
  }
  return std::nullopt;
}

bool is_nested(Method m) {
  return m == Method::kNsvd1 || m == Method::kNsvd2 || m == Method::kNid1 || m == Method::kNid2;
}

std::optional<WhitenerKind> required_whitener(Method m) {
  switch (m) {
    case Method::kSvd: return std::nullopt;
    case Method::kAsvd0: return WhitenerKind::kDiagAbsMean;
    case Method::kAsvd1:
    case Method::kNsvd1:
    case Method::kNid1: return WhitenerKind::kCholesky;
    case Method::kAsvd2:
    case Method::kNsvd2:
    case Method::kNid2: return WhitenerKind::kEigenSqrt;
    case Method::kAsvd3: return WhitenerKind::kEigenGamma;
  }
  return std::nullopt;
}

RankBudget rank_budget(std::size_t m, std::size_t n, double ratio, double split) {
  if (m == 0 || n == 0) throw ArgumentError("rank_budget: dimensions must be positive");
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ArgumentError("rank_budget: ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  if (!(split > 0.0 && split <= 1.0)) {
    throw ArgumentError("rank_budget: split must lie in (0, 1], got " + std::to_string(split));
  }
  const long double md = static_cast<long double>(m);
  const long double nd = static_cast<long double>(n);
  const long double kk = std::floor((1.0L - static_cast<long double>(ratio)) * md * nd / (md + nd));
  if (kk < 1.0L) {
    throw InfeasibleBudgetError("compression ratio " + std::to_string(ratio) + " leaves rank 0 for a " +
                                std::to_string(m) + "x" + std::to_string(n) + " layer");
  }
  RankBudget b;
  b.ratio = ratio;
  b.split = split;
  b.k = static_cast<std::size_t>(kk);
  // Round half up; the 1e-9 slack absorbs decimal split values such as 0.95
  // landing a hair below the .5 boundary.
  const double raw = std::floor(split * static_cast<double>(b.k) + 0.5 + 1e-9);
  b.k1 = std::clamp<std::size_t>(static_cast<std::size_t>(raw), 1, b.k);
  b.k2 = b.k - b.k1;
  return b;
}

DenseMatrix CompressedLayer::reconstruct() const {
  DenseMatrix out = stage1.product();
  if (stage2) out = out + stage2->product();
  return out;
}

std::size_t CompressedLayer::stored_entries() const noexcept {
  std::size_t n = stage1.w.size() + stage1.z.size();
  if (stage2) n += stage2->w.size() + stage2->z.size();
  return n;
}

CompressedLayer compress_plain_svd(const DenseMatrix& a, const RankBudget& budget) {
  require_rank(a, budget.k);
  const TruncatedSvd t = tsvd(a, budget.k);
  CompressedLayer layer{.method = Method::kSvd,
                        .rows = a.rows(),
                        .cols = a.cols(),
                        .budget = flat_budget(budget),
                        .stage1 = FactorPair{scale_columns(t.factors.u, t.factors.sigma), t.factors.vt},
                        .stage2 = std::nullopt,
                        .stage2_columns = {},
                        .whitener_fingerprint = 0,
                        .damping = 0.0,
                        .tau = 0.0};
  return layer;
}

CompressedLayer compress_activation_aware(const DenseMatrix& a, const Whitener& w,
                                          const RankBudget& budget) {
  require_rank(a, budget.k);
  if (w.dim() != a.cols()) {
    throw ArgumentError("whitener dimension " + std::to_string(w.dim()) +
                        " does not match layer input dimension " + std::to_string(a.cols()));
  }
  CompressedLayer layer{.method = flat_method(w.kind()),
                        .rows = a.rows(),
                        .cols = a.cols(),
                        .budget = flat_budget(budget),
                        .stage1 = activation_aware_stage(a, w, budget.k),
                        .stage2 = std::nullopt,
                        .stage2_columns = {},
                        .whitener_fingerprint = w.fingerprint(),
                        .damping = w.damping(),
                        .tau = w.tau()};
  return layer;
}

CompressedLayer compress_nested(const DenseMatrix& a, const Whitener& w, const RankBudget& budget,
                                ResidualStage stage2) {
  if (budget.k2 == 0) {
    throw ArgumentError("nested compression needs k2 >= 1; use the flat activation-aware method");
  }
  if (budget.k1 + budget.k2 > std::min(a.rows(), a.cols()) || budget.k1 == 0) {
    throw ArgumentError("nested budget k1 + k2 = " + std::to_string(budget.k1 + budget.k2) +
                        " is infeasible for a " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " layer");
  }
  if (w.dim() != a.cols()) {
    throw ArgumentError("whitener dimension " + std::to_string(w.dim()) +
                        " does not match layer input dimension " + std::to_string(a.cols()));
  }
  Method method;
  if (w.kind() == WhitenerKind::kCholesky) {
    method = stage2 == ResidualStage::kSvd ? Method::kNsvd1 : Method::kNid1;
  } else if (w.kind() == WhitenerKind::kEigenSqrt) {
    method = stage2 == ResidualStage::kSvd ? Method::kNsvd2 : Method::kNid2;
  } else {
    throw ArgumentError("nested compression supports cholesky or eigen-sqrt whiteners, got " +
                        std::string(to_string(w.kind())));
  }

  CompressedLayer layer{.method = method,
                        .rows = a.rows(),
                        .cols = a.cols(),
                        .budget = budget,
                        .stage1 = activation_aware_stage(a, w, budget.k1),
                        .stage2 = std::nullopt,
                        .stage2_columns = {},
                        .whitener_fingerprint = w.fingerprint(),
                        .damping = w.damping(),
                        .tau = w.tau()};

  // The residual stage works in plain (unwhitened) Frobenius norm.
  const DenseMatrix residual = a - layer.stage1.product();
  if (stage2 == ResidualStage::kSvd) {
    const TruncatedSvd t = tsvd(residual, budget.k2);
    layer.stage2 = FactorPair{scale_columns(t.factors.u, t.factors.sigma), t.factors.vt};
  } else {
    IdFactors id = column_id(residual, budget.k2);
    layer.stage2 = FactorPair{id.skeleton(residual), std::move(id.interp)};
    layer.stage2_columns = std::move(id.column_indices);
  }
  return layer;
}

CompressedLayer compress_layer(const DenseMatrix& a, Method method, const Whitener* w,
                               const RankBudget& budget) {
  const auto needed = required_whitener(method);
  if (!needed) return compress_plain_svd(a, budget);
  if (w == nullptr) {
    throw ArgumentError("method " + std::string(to_string(method)) + " needs calibration data");
  }
  if (w->kind() != *needed) {
    throw ArgumentError("method " + std::string(to_string(method)) + " needs a " +
                        std::string(to_string(*needed)) + " whitener, got " +
                        std::string(to_string(w->kind())));
  }
  if (!is_nested(method) || budget.k2 == 0) return compress_activation_aware(a, *w, budget);
  const bool id = method == Method::kNid1 || method == Method::kNid2;
  return compress_nested(a, *w, budget, id ? ResidualStage::kInterpolative : ResidualStage::kSvd);
}

DenseMatrix apply(const CompressedLayer& layer, const DenseMatrix& x, ApplyCounters* counters) {
  if (x.rows() != layer.cols) {
    throw ArgumentError("apply: input has " + std::to_string(x.rows()) +
                        " rows, layer expects " + std::to_string(layer.cols));
  }
  DenseMatrix out =
      counted_product(layer.stage1.w, counted_product(layer.stage1.z, x, counters), counters);
  if (layer.stage2) {
    out = out + counted_product(layer.stage2->w, counted_product(layer.stage2->z, x, counters),
                                counters);
  }
  return out;
}

}  // namespace nsvd
