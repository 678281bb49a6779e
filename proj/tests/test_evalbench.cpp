#include <doctest.h>

#include <cmath>
#include <numbers>

#include "nsvd/error.hpp"
#include "nsvd/evalbench.hpp"
#include "oracles.hpp"

using nsvd::DenseMatrix;
using nsvd::IdentityParams;

TEST_CASE("identity_residual") {
  CHECK(nsvd::identity_residual(2.0, 2.0) == 0.0);
  CHECK(nsvd::identity_residual(3.0, 2.0) == 0.5);
  CHECK(nsvd::identity_residual(1e-40, 0.0) == doctest::Approx(1e-10));
}

TEST_CASE("activation_loss") {
  const DenseMatrix a = oracle::gaussian(8, 6, 1);
  const auto exact = nsvd::compress_plain_svd(a, nsvd::RankBudget{0.0, 6, 1.0, 6, 0});
  CHECK(nsvd::activation_loss(a, exact, oracle::gaussian(6, 5, 2)) <= 1e-12 * nsvd::frobenius_norm(a));

  const auto l = nsvd::compress_plain_svd(a, nsvd::RankBudget{0.0, 2, 1.0, 2, 0});
  CHECK(nsvd::activation_loss(a, l, DenseMatrix::identity(6)) ==
        doctest::Approx(nsvd::frobenius_norm(a - l.reconstruct())).epsilon(1e-12));

  const DenseMatrix x = oracle::gaussian(6, 9, 3);
  const double dense = nsvd::frobenius_norm(oracle::naive_product(a - l.reconstruct(), x));
  CHECK(nsvd::activation_loss(a, l, x) == doctest::Approx(dense).epsilon(1e-10));

  CHECK_THROWS_AS(nsvd::activation_loss(a, l, DenseMatrix(5, 2)), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::activation_loss(DenseMatrix(3, 3), l, x), nsvd::ArgumentError);
}

TEST_CASE("loss identities: small example drops sigma_3") {
  IdentityParams p;
  p.m = 8;
  p.n = 6;
  p.p = 32;
  p.drop = 3;
  p.k = 2;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    p.seed = seed;
    const auto c = nsvd::verify_theorem2(p);
    CHECK(c.cholesky.drop_loss / c.cholesky.dropped_sigma >= 1 - 1e-8);
    CHECK(c.cholesky.drop_loss / c.cholesky.dropped_sigma <= 1 + 1e-8);
    CHECK(c.eigen_sqrt.drop_residual <= 1e-8);
    CHECK(c.max_residual() <= 1e-8);
    CHECK(c.report.identity_residual.value() <= 1e-8);
    CHECK(c.report.stored_entries == (8 + 6) * 2);
  }
  p.k = 6;
  const auto full = nsvd::verify_theorem2(p);
  CHECK(full.cholesky.tail_norm == 0.0);
  CHECK(full.cholesky.truncation_loss <= 1e-10);
  CHECK_THROWS_AS(nsvd::verify_theorem2(IdentityParams{.seed = 0, .m = 8, .n = 6, .p = 4}), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::verify_theorem2(IdentityParams{.seed = 0, .drop = 40}), nsvd::ArgumentError);
}

TEST_CASE("loss identities through an independent singular-value route") {
  const auto prob = nsvd::gaussian_problem(IdentityParams{.seed = 4});
  nsvd::GramStats s(prob.x.rows());
  s.accumulate(prob.x);
  const auto w = nsvd::whitener_cholesky(s);
  const auto id = nsvd::whitened_identity(prob.a, prob.x, w, 3, 8);
  Eigen::LLT<Eigen::MatrixXd> llt(oracle::to_eigen(s.gram()));
  const auto sigma = oracle::singular_values_jacobi(
      oracle::from_eigen(oracle::to_eigen(prob.a) * llt.matrixL().toDenseMatrix()));
  CHECK(id.dropped_sigma == doctest::Approx(sigma[2]).epsilon(1e-10));
  CHECK(id.tail_norm == doctest::Approx(oracle::tail(sigma, 8)).epsilon(1e-10));
}

TEST_CASE("gaussian_problem reseeds only when needed") {
  const auto g = nsvd::gaussian_problem(IdentityParams{.seed = 12});
  CHECK_FALSE(g.reseeded);
  CHECK(g.seed_used == 12);
  CHECK(g.a.rows() == 32);
  CHECK(g.x.cols() == 64);
}

TEST_CASE("equivalence of Cholesky and eigen-sqrt reconstructions") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto c = nsvd::verify_theorem3_equivalence(IdentityParams{.seed = seed});
    CHECK(c.full_rank);
    CHECK(c.gap <= 1e-6);
  }
  const DenseMatrix a = oracle::gaussian(7, 5, 9);
  const auto id = nsvd::reconstruction_gap(a, DenseMatrix::identity(5), 3);
  CHECK(id.gap <= 1e-10);

  const auto deficient = nsvd::reconstruction_gap(a, oracle::gaussian(5, 3, 10), 3);
  CHECK_FALSE(deficient.full_rank);
}

TEST_CASE("gamma-scaled whitening checks") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = nsvd::verify_theorem4(IdentityParams{.seed = seed});
    CHECK(g.trace_bound_holds());
    CHECK(g.drop_identity_holds());
    CHECK(g.tail_bound_holds());
    CHECK(g.truncation_residual <= 1e-8);
    CHECK(g.drop_residual_trace_form > 1e-3);
  }

  // Isotropic gram: every trace term is exactly 1.
  const DenseMatrix a = oracle::gaussian(6, 4, 20);
  const DenseMatrix x = 3.0 * DenseMatrix::identity(4);
  const auto iso = nsvd::gamma_check(a, x, 2, 2);
  CHECK(iso.max_trace == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(iso.drop_residual <= 1e-12);
  CHECK(iso.drop_residual_trace_form <= 1e-12);

  // n = 1: gamma whitening and eigen-sqrt whitening reconstruct identically.
  const DenseMatrix a1 = oracle::gaussian(5, 1, 21);
  const DenseMatrix x1 = oracle::gaussian(1, 7, 22);
  nsvd::GramStats s1(1);
  s1.accumulate(x1);
  const nsvd::RankBudget b{0.0, 1, 1.0, 1, 0};
  const auto lg = nsvd::compress_activation_aware(a1, nsvd::whitener_eigen(s1, nsvd::EigenVariant::kGamma), b);
  const auto ls = nsvd::compress_activation_aware(a1, nsvd::whitener_eigen(s1, nsvd::EigenVariant::kSqrt), b);
  CHECK(nsvd::relative_difference(lg.reconstruct(), ls.reconstruct()) <= 1e-10);

  CHECK(std::string(nsvd::kGammaFormNote).find("square root") != std::string::npos);
}

TEST_CASE("eckart_young_check") {
  const auto e = nsvd::eckart_young_check(oracle::gaussian(10, 7, 30), 3, 100, 31);
  CHECK(e.residual <= 1e-10);
  CHECK(e.beats_all);
  CHECK(e.best_candidate >= e.loss);
}

TEST_CASE("cosine similarity profile examples") {
  const DenseMatrix cal = oracle::gaussian(8, 20, 40);
  const auto self = nsvd::cosine_similarity_profile(cal, cal, 50, 1, nsvd::PairMode::kSelf);
  CHECK(self.mean == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(self.stddev <= 1e-7);
  CHECK(self.used == 50);

  DenseMatrix top(6, 10), bottom(6, 12);
  nsvd::Rng rng(3);
  const DenseMatrix g1 = nsvd::gaussian_matrix(3, 10, rng);
  const DenseMatrix g2 = nsvd::gaussian_matrix(3, 12, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 10; ++j) top(i, j) = g1(i, j);
    for (std::size_t j = 0; j < 12; ++j) bottom(i + 3, j) = g2(i, j);
  }
  CHECK(nsvd::cosine_similarity_profile(top, bottom, 100, 2).mean == 0.0);

  DenseMatrix with_zero = cal;
  for (std::size_t i = 0; i < 8; ++i) with_zero(i, 0) = 0.0;
  const auto skip = nsvd::cosine_similarity_profile(with_zero, cal, 400, 5);
  CHECK(skip.skipped > 0);
  CHECK(skip.used + skip.skipped == 400);

  CHECK_THROWS_AS(nsvd::cosine_similarity_profile(DenseMatrix(3, 4), cal.block(0, 0, 3, 4), 5, 0),
                  nsvd::DegenerateInputError);
  CHECK_THROWS_AS(nsvd::cosine_similarity_profile(cal, cal, 401, 0), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::cosine_similarity_profile(cal, cal, 0, 0), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::cosine_similarity_profile(cal, cal.block(0, 0, 8, 3), 3, 0, nsvd::PairMode::kSelf),
                  nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::cosine_similarity_profile(cal, oracle::gaussian(7, 3, 1), 3, 0), nsvd::ArgumentError);
}

TEST_CASE("shift generator: similarity at the anchor angles and Monte-Carlo check") {
  nsvd::ShiftSpec spec;
  spec.p_cal = 400;
  spec.p_eval = 400;
  spec.seed = 17;

  spec.angle = 0.0;
  auto d = nsvd::generate_shifted(spec);
  CHECK(nsvd::cosine_similarity_profile(d.x_cal, d.x_eval, 20000, 1).mean >= 0.9);

  spec.angle = std::numbers::pi / 2;
  d = nsvd::generate_shifted(spec);
  CHECK(nsvd::cosine_similarity_profile(d.x_cal, d.x_eval, 20000, 1).mean <= 0.1);

  spec.angle = std::numbers::pi / 3;
  d = nsvd::generate_shifted(spec);
  const auto mc = nsvd::cosine_similarity_profile(d.x_cal, d.x_eval, 100000, 2);
  CHECK(std::abs(mc.mean - nsvd::expected_cosine(spec)) <= 0.05);
  MESSAGE("pi/3: measured " << mc.mean << ", expected " << nsvd::expected_cosine(spec));

  CHECK(nsvd::angle_for_cosine(spec, nsvd::expected_cosine(spec)) ==
        doctest::Approx(std::numbers::pi / 3).epsilon(1e-12));
}

TEST_CASE("shift generator: weight spectrum, determinism, validation") {
  nsvd::ShiftSpec spec;
  spec.seed = 3;
  const auto d1 = nsvd::generate_shifted(spec);
  const auto d2 = nsvd::generate_shifted(spec);
  CHECK(d1.a == d2.a);
  CHECK(d1.x_cal == d2.x_cal);
  CHECK(d1.x_eval == d2.x_eval);
  CHECK(d1.x_cal.rows() == 64);
  CHECK(d1.x_cal.cols() == 256);

  const auto sigma = oracle::singular_values_jacobi(d1.a);
  for (std::size_t i = 0; i < sigma.size(); ++i)
    CHECK(std::abs(sigma[i] / sigma[0] - 1.0 / static_cast<double>(i + 1)) <= 1e-12);

  auto bad = spec;
  bad.angle = 2.0;
  CHECK_THROWS_AS(nsvd::generate_shifted(bad), nsvd::ArgumentError);
  bad = spec;
  bad.latent_dim = 40;
  CHECK_THROWS_AS(nsvd::generate_shifted(bad), nsvd::ArgumentError);
  bad = spec;
  bad.coherence = 1.0;
  CHECK_THROWS_AS(nsvd::generate_shifted(bad), nsvd::ArgumentError);
  bad = spec;
  bad.spectrum_decay = 0.0;
  CHECK_THROWS_AS(nsvd::generate_shifted(bad), nsvd::ArgumentError);
}

TEST_CASE("classify_trend") {
  CHECK(nsvd::classify_trend({1, 1, 1}) == "flat");
  CHECK(nsvd::classify_trend({3, 2, 2, 1}) == "non-increasing");
  CHECK(nsvd::classify_trend({1, 2, 3}) == "non-decreasing");
  CHECK(nsvd::classify_trend({3, 1, 2}) == "decreasing-then-increasing");
  CHECK(nsvd::classify_trend({1, 3, 2}) == "increasing-then-decreasing");
  CHECK(nsvd::classify_trend({1, 3, 2, 4}) == "mixed");
}

TEST_CASE("sweep: ASVD-I against itself ties on every row") {
  nsvd::SweepConfig cfg;
  cfg.methods = {nsvd::Method::kAsvd1};
  cfg.ratios = {0.3};
  cfg.trials = 4;
  cfg.spec.n = 16;
  cfg.spec.rows = 12;
  cfg.spec.latent_dim = 8;
  cfg.spec.p_cal = 64;
  cfg.spec.p_eval = 64;
  const auto r = nsvd::sweep(cfg);
  REQUIRE(r.summary.size() == 1);
  CHECK(r.summary[0].ties == 4);
  CHECK(r.summary[0].wins == 0);
  CHECK(r.rows.size() == 4);
}

TEST_CASE("sweep: at angle 0 ASVD-I has the lowest calibration and evaluation loss") {
  // ASVD-II reconstructs the same matrix up to rounding, hence the tie tolerance.
  nsvd::SweepConfig cfg;
  cfg.methods.assign(std::begin(nsvd::kAllMethods), std::end(nsvd::kAllMethods));
  cfg.ratios = {0.1, 0.3};
  cfg.splits = {0.95, 0.8};
  cfg.trials = 5;
  cfg.spec.angle = 0.0;
  const auto r = nsvd::sweep(cfg);
  for (double ratio : cfg.ratios) {
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      const nsvd::LossReport* ref = nullptr;
      for (const auto& row : r.rows)
        if (row.trial == t && row.report.budget.ratio == ratio && row.report.method == nsvd::Method::kAsvd1)
          ref = &row.report;
      REQUIRE(ref != nullptr);
      for (const auto& row : r.rows) {
        if (row.trial != t || row.report.budget.ratio != ratio) continue;
        CHECK(row.report.activation_loss_cal >= ref->activation_loss_cal * (1 - 1e-8));
        CHECK(row.report.activation_loss_eval >= ref->activation_loss_eval * (1 - 1e-8));
      }
    }
  }
}

TEST_CASE("sweep: output is independent of thread count and reports skips and trends") {
  nsvd::SweepConfig cfg;
  cfg.methods = {nsvd::Method::kSvd, nsvd::Method::kAsvd1, nsvd::Method::kNsvd1, nsvd::Method::kNid1};
  cfg.ratios = {0.3, 0.999};
  cfg.splits = {0.95, 0.8, 0.6};
  cfg.trials = 6;
  cfg.spec.n = 16;
  cfg.spec.rows = 16;
  cfg.spec.latent_dim = 8;
  cfg.spec.p_cal = 64;
  cfg.spec.p_eval = 64;
  cfg.spec.angle = 1.0;
  cfg.threads = 1;
  const auto serial = nsvd::sweep(cfg);
  cfg.threads = 4;
  const auto parallel = nsvd::sweep(cfg);
  CHECK(nsvd::sweep_csv(serial) == nsvd::sweep_csv(parallel));
  CHECK(nsvd::sweep_summary_json(serial, "t") == nsvd::sweep_summary_json(parallel, "t"));
  CHECK(serial.skipped.size() == 1);

  const std::string csv = nsvd::sweep_csv(serial);
  CHECK(csv.rfind(std::string(nsvd::kCsvHeader) + "\n", 0) == 0);
  // 2 flat methods + 2 nested x 3 splits, per trial.
  CHECK(serial.rows.size() == 6 * (2 + 2 * 3));
  CHECK(serial.trends.size() == 2 * 3);
  for (const auto& row : serial.rows) {
    CHECK(row.report.stored_entries == (16 + 16) * 5);
    CHECK(row.report.plain_loss >= 0.0);
    if (row.report.method == nsvd::Method::kSvd) CHECK(row.report.identity_residual.value() <= 1e-8);
  }
  CHECK(nsvd::sweep_summary_json(serial, "t").find("\"pairing\"") != std::string::npos);

  nsvd::SweepConfig empty = cfg;
  empty.methods.clear();
  CHECK_THROWS_AS(nsvd::sweep(empty), nsvd::ArgumentError);
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -0.0}) {
    CHECK(std::stod(nsvd::format_double(v)) == v);
  }
  CHECK(nsvd::format_double(0.3) == "0.3");
}
