#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "nsvd/calibration.hpp"
#include "nsvd/matrix.hpp"

namespace nsvd {

enum class Method { kSvd, kAsvd0, kAsvd1, kAsvd2, kAsvd3, kNsvd1, kNsvd2, kNid1, kNid2 };

inline constexpr Method kAllMethods[] = {Method::kSvd,   Method::kAsvd0, Method::kAsvd1,
                                         Method::kAsvd2, Method::kAsvd3, Method::kNsvd1,
                                         Method::kNsvd2, Method::kNid1,  Method::kNid2};

std::string_view to_string(Method m);
/// Parses the lower-case tag ("svd", "asvd1", "nid2", ...).
std::optional<Method> parse_method(std::string_view tag);
bool is_nested(Method m);
/// Whitener kind a method calibrates with; nullopt for plain SVD.
std::optional<WhitenerKind> required_whitener(Method m);

/// Rank allocation for one m x n layer at a given compression ratio.
///
/// k = floor((1 - ratio) m n / (m + n)) so the absorbed factor storage
/// (m + n) k never exceeds the retained parameter budget. The nested split
/// assigns k1 = max(1, round_half_up(split k)) to the activation-aware stage
/// and the remainder k2 = k - k1 to the plain residual stage.
struct RankBudget {
  double ratio = 0.0;
  std::size_t k = 0;
  double split = 1.0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;

  friend bool operator==(const RankBudget&, const RankBudget&) = default;
};

RankBudget rank_budget(std::size_t m, std::size_t n, double ratio, double split);

/// Left factor w (m x k, singular values absorbed) and right factor z (k x n).
struct FactorPair {
  DenseMatrix w;
  DenseMatrix z;

  std::size_t rank() const noexcept { return w.cols(); }
  DenseMatrix product() const { return w * z; }
};

struct CompressedLayer {
  Method method = Method::kSvd;
  std::size_t rows = 0;
  std::size_t cols = 0;
  RankBudget budget;
  FactorPair stage1;
  std::optional<FactorPair> stage2;
  /// Skeleton column indices of the residual (NID layers only).
  std::vector<std::size_t> stage2_columns;
  std::uint64_t whitener_fingerprint = 0;
  double damping = 0.0;
  double tau = 0.0;

  DenseMatrix reconstruct() const;
  std::size_t stored_entries() const noexcept;
};

CompressedLayer compress_plain_svd(const DenseMatrix& a, const RankBudget& budget);

/// Truncated SVD of A S at rank budget.k; stage1 = (U_k Sigma_k, V_k^T S^{-1}).
CompressedLayer compress_activation_aware(const DenseMatrix& a, const Whitener& w,
                                          const RankBudget& budget);

enum class ResidualStage { kSvd, kInterpolative };

/// Activation-aware stage at rank k1, then a rank-k2 plain approximation of
/// the residual A - W1 Z1 (truncated SVD or column ID). Requires k2 >= 1.
CompressedLayer compress_nested(const DenseMatrix& a, const Whitener& w, const RankBudget& budget,
                                ResidualStage stage2);

/// Method dispatch. The whitener must match required_whitener(method) and is
/// ignored for plain SVD. Nested methods whose budget leaves k2 = 0 produce
/// the corresponding flat activation-aware layer.
CompressedLayer compress_layer(const DenseMatrix& a, Method method, const Whitener* w,
                               const RankBudget& budget);

struct ApplyCounters {
  /// Scalar multiply-add operations; each one is two flops.
  std::uint64_t multiply_adds = 0;
};

/// O = W1 (Z1 X) + W2 (Z2 X), factor-first; never forms the dense layer.
DenseMatrix apply(const CompressedLayer& layer, const DenseMatrix& x,
                  ApplyCounters* counters = nullptr);

}  // namespace nsvd
