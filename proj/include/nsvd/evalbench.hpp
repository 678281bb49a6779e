#pragma once

#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "nsvd/compress.hpp"
#include "nsvd/matrix.hpp"

namespace nsvd {

/// |measured - predicted| / max(predicted, 1e-30).
double identity_residual(double measured, double predicted);

struct LossReport {
  Method method = Method::kSvd;
  RankBudget budget;
  double plain_loss = 0.0;
  double activation_loss_cal = 0.0;
  double activation_loss_eval = 0.0;
  std::optional<double> predicted_loss;
  std::optional<double> identity_residual;
  std::size_t stored_entries = 0;
};

/// ||(A - reconstruct(layer)) X||_F, evaluated as A X - W1 (Z1 X) - W2 (Z2 X).
double activation_loss(const DenseMatrix& a, const CompressedLayer& layer, const DenseMatrix& x);

// ---------------------------------------------------------------------------
// Loss-identity checks on seeded Gaussian problems.
// ---------------------------------------------------------------------------

struct IdentityParams {
  std::uint64_t seed = 0;
  std::size_t m = 32;
  std::size_t n = 24;
  std::size_t p = 64;
  /// 1-based index of the singular value dropped in the single-mode check.
  std::size_t drop = 3;
  /// Truncation rank for the tail check.
  std::size_t k = 8;
};

/// Gaussian A (m x n) and X (n x p) drawn from one seed.
struct GaussianProblem {
  DenseMatrix a;
  DenseMatrix x;
  std::uint64_t seed_used;
  /// True when X came out rank-deficient and the seed was advanced.
  bool reseeded;
};

/// Draws a problem, advancing the seed until X has full row rank when p >= n.
GaussianProblem gaussian_problem(const IdentityParams& params);

/// Whitened-loss identities for one whitener: dropping sigma_j of A S costs
/// exactly sigma_j, and truncating to rank k costs the tail norm.
struct WhitenedIdentity {
  double dropped_sigma = 0.0;
  double drop_loss = 0.0;
  double drop_residual = 0.0;
  double tail_norm = 0.0;
  double truncation_loss = 0.0;
  double truncation_residual = 0.0;

  double max_residual() const;
};

WhitenedIdentity whitened_identity(const DenseMatrix& a, const DenseMatrix& x, const Whitener& w,
                                   std::size_t drop, std::size_t k);

struct Theorem2Check {
  std::uint64_t seed_used = 0;
  bool reseeded = false;
  WhitenedIdentity cholesky;
  WhitenedIdentity eigen_sqrt;
  /// Truncation at rank k through the Cholesky whitener.
  LossReport report;

  double max_residual() const;
};

Theorem2Check verify_theorem2(const IdentityParams& params);

struct EquivalenceCheck {
  double gap = 0.0;
  bool full_rank = false;
  std::uint64_t seed_used = 0;
};

/// ||A_chol - A_eig||_F / ||A_chol||_F at rank k for one calibration set.
EquivalenceCheck reconstruction_gap(const DenseMatrix& a, const DenseMatrix& x, std::size_t k);
EquivalenceCheck verify_theorem3_equivalence(const IdentityParams& params);

/// Scaled-eigenvalue whitening S = gamma P.
///
/// Per mode the directly measured loss of dropping sigma_j of A P gamma is
/// sigma_j * sqrt(t_j) with t_j = v_j^T (Lambda / gamma^2) v_j, and the tail
/// loss squared is sum_i sigma_i^2 t_i. Since every t_i <= 1, the squared
/// loss is bounded by the plain singular tail. The unsquared-trace per-mode
/// form sigma_j * t_j and the squared-trace tail form sum sigma_i^2 t_i^2 are
/// evaluated too and reported as deviations; they are not asserted.
struct GammaCheck {
  double gamma = 0.0;
  double max_trace = 0.0;
  double drop_loss = 0.0;
  double drop_predicted = 0.0;
  double drop_residual = 0.0;
  double drop_residual_trace_form = 0.0;
  double truncation_loss_sq = 0.0;
  double weighted_tail_sq = 0.0;
  double plain_tail_sq = 0.0;
  double truncation_residual = 0.0;
  double truncation_residual_trace_sq_form = 0.0;
  LossReport report;

  bool trace_bound_holds() const { return max_trace <= 1.0 + 1e-10; }
  bool drop_identity_holds() const { return drop_residual <= 1e-8; }
  bool tail_bound_holds() const { return truncation_loss_sq <= plain_tail_sq + 1e-8; }
};

GammaCheck gamma_check(const DenseMatrix& a, const DenseMatrix& x, std::size_t drop, std::size_t k);
GammaCheck verify_theorem4(const IdentityParams& params);

/// Text emitted by `verify` describing the per-mode loss forms for the
/// gamma-scaled whitener.
extern const char* const kGammaFormNote;

/// Exact Eckart-Young check: tsvd loss against the singular tail, and against
/// `candidates` random rank-k matrices.
struct EckartYoungCheck {
  double loss = 0.0;
  double tail = 0.0;
  double residual = 0.0;
  double best_candidate = 0.0;
  bool beats_all = false;
};

EckartYoungCheck eckart_young_check(const DenseMatrix& a, std::size_t k, std::size_t candidates,
                                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Activation similarity and synthetic distribution shift.
// ---------------------------------------------------------------------------

enum class PairMode {
  /// Uniform random (calibration column, evaluation column) pairs.
  kRandom,
  /// Column i of the calibration set against column i of the evaluation set.
  kSelf,
};

struct SimilarityProfile {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

SimilarityProfile cosine_similarity_profile(const DenseMatrix& cal, const DenseMatrix& eval,
                                            std::size_t pairs, std::uint64_t seed,
                                            PairMode mode = PairMode::kRandom);

/// Calibration activations live in a random d-dimensional subspace B:
///   x = B (mu + z) + e,  z ~ N(0, diag(c)),  c_i proportional to i^-decay,
/// with a shared latent mean mu carrying `coherence` of the expected squared
/// norm and isotropic ambient noise e. Evaluation activations use the rotated
/// basis B cos(angle) + B_perp sin(angle), B_perp orthogonal to B. The weight
/// matrix has singular values i^-decay with random singular vectors.
struct ShiftSpec {
  std::size_t n = 64;
  std::size_t rows = 64;
  std::size_t latent_dim = 32;
  std::size_t p_cal = 256;
  std::size_t p_eval = 256;
  double angle = 0.0;
  double spectrum_decay = 1.0;
  double coherence = 0.95;
  /// Total ambient noise energy relative to the latent variance.
  double noise_energy = 0.01;
  std::uint64_t seed = 0;
};

void validate(const ShiftSpec& spec);

struct ShiftedData {
  DenseMatrix x_cal;
  DenseMatrix x_eval;
  DenseMatrix a;
};

ShiftedData generate_shifted(const ShiftSpec& spec);

/// cos(angle) * coherence: the ratio E[x . y] / E[|x|^2] for a calibration
/// column x and an evaluation column y.
double expected_cosine(const ShiftSpec& spec);

/// Angle at which expected_cosine equals `target` (clamped to [0, pi/2]).
double angle_for_cosine(const ShiftSpec& spec, double target);

// ---------------------------------------------------------------------------
// Method comparison sweep.
// ---------------------------------------------------------------------------

struct SweepConfig {
  std::vector<Method> methods;
  std::vector<double> ratios;
  std::vector<double> splits{0.95};
  ShiftSpec spec;
  std::size_t trials = 1;
  std::size_t threads = 1;
};

struct SweepRow {
  std::size_t trial = 0;
  LossReport report;
};

struct SweepSummary {
  Method method = Method::kSvd;
  double ratio = 0.0;
  double split = 1.0;
  std::size_t count = 0;
  /// Against ASVD-I at the same ratio and trial, on evaluation loss.
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  double mean_plain = 0.0, std_plain = 0.0;
  double mean_cal = 0.0, std_cal = 0.0;
  double mean_eval = 0.0, std_eval = 0.0;

  double win_rate() const { return count ? static_cast<double>(wins) / count : 0.0; }
};

/// Shape of a metric's mean along the split axis (largest split first).
struct SplitTrend {
  Method method = Method::kSvd;
  double ratio = 0.0;
  std::string metric;
  std::vector<double> splits;
  std::vector<double> means;
  /// One of: flat, non-increasing, non-decreasing, decreasing-then-increasing,
  /// increasing-then-decreasing, mixed.
  std::string shape;
};

struct SweepResult {
  SweepConfig config;
  std::vector<SweepRow> rows;
  std::vector<std::string> skipped;
  std::vector<SweepSummary> summary;
  std::vector<SplitTrend> trends;
};

/// Every trial draws its data from derive_seed(spec.seed, trial), so the
/// table does not depend on thread scheduling. Non-nested methods produce one
/// row per (ratio, trial) with split 1.
SweepResult sweep(const SweepConfig& config);

/// Classifies a sequence (see SplitTrend::shape).
std::string classify_trend(const std::vector<double>& values);

inline constexpr const char* kCsvHeader =
    "method,ratio,split,trial,plain_loss,cal_loss,eval_loss,predicted_loss,identity_residual,"
    "stored_entries";

std::string sweep_csv(const SweepResult& result);
std::string sweep_summary_json(const SweepResult& result, const std::string& tool_version);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace nsvd
