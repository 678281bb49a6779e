#include <doctest.h>

#include <cmath>

#include "nsvd/compress.hpp"
#include "nsvd/error.hpp"
#include "oracles.hpp"

using nsvd::DenseMatrix;
using nsvd::Method;
using nsvd::RankBudget;

namespace {

nsvd::GramStats stats_of(const DenseMatrix& x) {
  nsvd::GramStats s(x.rows());
  s.accumulate(x);
  return s;
}

double act_loss(const DenseMatrix& a, const nsvd::CompressedLayer& l, const DenseMatrix& x) {
  return nsvd::frobenius_norm((a - l.reconstruct()) * x);
}

}  // namespace

TEST_CASE("rank_budget examples") {
  const RankBudget big = nsvd::rank_budget(4096, 4096, 0.2, 1.0);
  CHECK(big.k == 1638);
  CHECK(big.k1 == 1638);
  CHECK(big.k2 == 0);

  const RankBudget half_up = nsvd::rank_budget(100, 100, 0.0, 0.95);
  CHECK(half_up.k == 50);
  CHECK(half_up.k1 == 48);
  CHECK(half_up.k2 == 2);

  const RankBudget small = nsvd::rank_budget(8, 4, 0.5, 0.95);
  CHECK(small.k == 1);
  CHECK(small.k1 == 1);
  CHECK(small.k2 == 0);

  const RankBudget twenty = nsvd::rank_budget(40, 40, 0.0, 0.95);
  CHECK(twenty.k == 20);
  CHECK(twenty.k1 == 19);
  CHECK(twenty.k2 == 1);
}

TEST_CASE("rank_budget errors") {
  CHECK_THROWS_AS(nsvd::rank_budget(8, 8, 0.999, 0.95), nsvd::InfeasibleBudgetError);
  CHECK_THROWS_AS(nsvd::rank_budget(8, 8, 1.0, 0.95), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::rank_budget(8, 8, -0.1, 0.95), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::rank_budget(8, 8, 0.3, 0.0), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::rank_budget(8, 8, 0.3, 1.5), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::rank_budget(0, 8, 0.3, 0.9), nsvd::ArgumentError);
}

TEST_CASE("rank_budget invariants over a grid") {
  for (std::size_t m : {3, 8, 17, 64, 100})
    for (std::size_t n : {2, 9, 24, 64})
      for (double ratio : {0.0, 0.1, 0.25, 0.3, 0.5, 0.7})
        for (double split : {0.8, 0.85, 0.9, 0.95, 0.99, 1.0}) {
          RankBudget b;
          try {
            b = nsvd::rank_budget(m, n, ratio, split);
          } catch (const nsvd::InfeasibleBudgetError&) {
            CHECK(std::floor((1 - ratio) * m * n / (m + n)) < 1.0);
            continue;
          }
          CHECK(b.k == static_cast<std::size_t>(std::floor((1 - ratio) * m * n / (m + n) + 1e-12)));
          CHECK(b.k1 >= 1);
          CHECK(b.k1 + b.k2 == b.k);
          CHECK(static_cast<double>((m + n) * b.k) <= (1 - ratio) * m * n + 1e-9);
          const double r = std::max(1.0, std::floor(split * b.k + 0.5));
          CHECK(b.k1 == static_cast<std::size_t>(std::min<double>(r, b.k)));
        }
}

TEST_CASE("method tags") {
  for (Method m : nsvd::kAllMethods) CHECK(nsvd::parse_method(nsvd::to_string(m)) == m);
  CHECK_FALSE(nsvd::parse_method("asvd4"));
  CHECK(nsvd::is_nested(Method::kNid2));
  CHECK_FALSE(nsvd::is_nested(Method::kAsvd3));
  CHECK_FALSE(nsvd::required_whitener(Method::kSvd));
  CHECK(nsvd::required_whitener(Method::kNsvd2) == nsvd::WhitenerKind::kEigenSqrt);
  CHECK(nsvd::required_whitener(Method::kAsvd0) == nsvd::WhitenerKind::kDiagAbsMean);
}

TEST_CASE("plain svd compression") {
  const DenseMatrix r2 = oracle::gaussian(6, 2, 1) * oracle::gaussian(2, 5, 2);
  const auto l = nsvd::compress_plain_svd(r2, RankBudget{0.0, 2, 1.0, 2, 0});
  CHECK(nsvd::frobenius_norm(r2 - l.reconstruct()) <= 1e-10 * nsvd::frobenius_norm(r2));

  const DenseMatrix d{{3, 0, 0}, {0, 2, 0}, {0, 0, 1}};
  const auto l1 = nsvd::compress_plain_svd(d, RankBudget{0.0, 1, 1.0, 1, 0});
  CHECK(nsvd::frobenius_norm(d - l1.reconstruct()) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-14));
  CHECK(l1.stage1.w.cols() == 1);
  CHECK(l1.stage1.w(0, 0) == doctest::Approx(3.0));  // singular value sits in the left factor

  const DenseMatrix a = oracle::gaussian(16, 12, 3);
  const auto l5 = nsvd::compress_plain_svd(a, RankBudget{0.0, 5, 1.0, 5, 0});
  CHECK(nsvd::frobenius_norm(a - l5.reconstruct()) ==
        doctest::Approx(oracle::tail(oracle::singular_values_jacobi(a), 5)).epsilon(1e-10));
  CHECK_THROWS_AS(nsvd::compress_plain_svd(a, RankBudget{0.0, 13, 1.0, 13, 0}), nsvd::ArgumentError);
}

TEST_CASE("activation-aware compression: whitened tail identity and cross-whitener equivalence") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DenseMatrix a = oracle::gaussian(20, 12, seed);
    const DenseMatrix x = oracle::gaussian(12, 40, 1000 + seed);
    const auto s = stats_of(x);
    const auto chol = nsvd::whitener_cholesky(s);
    const auto eig = nsvd::whitener_eigen(s, nsvd::EigenVariant::kSqrt);
    for (std::size_t k : {1, 4, 11}) {
      const RankBudget b{0.0, k, 1.0, k, 0};
      const auto lc = nsvd::compress_activation_aware(a, chol, b);
      const auto le = nsvd::compress_activation_aware(a, eig, b);
      // Singular values of A S from an independent route: A L with Eigen's LLT factor.
      Eigen::LLT<Eigen::MatrixXd> llt(oracle::to_eigen(s.gram()));
      const Eigen::MatrixXd as = oracle::to_eigen(a) * llt.matrixL().toDenseMatrix();
      const double predicted = oracle::tail(oracle::singular_values_jacobi(oracle::from_eigen(as)), k);
      CHECK(std::abs(act_loss(a, lc, x) - predicted) <= 1e-8 * predicted);
      CHECK(nsvd::relative_difference(le.reconstruct(), lc.reconstruct()) <= 1e-6);
      CHECK(lc.method == Method::kAsvd1);
      CHECK(le.method == Method::kAsvd2);
      CHECK(lc.whitener_fingerprint == chol.fingerprint());
    }
  }
  const auto w = nsvd::whitener_cholesky(stats_of(DenseMatrix::identity(3)));
  CHECK_THROWS_AS(nsvd::compress_activation_aware(DenseMatrix(4, 5), w, RankBudget{0.0, 1, 1.0, 1, 0}),
                  nsvd::ArgumentError);
}

TEST_CASE("nested compression: monotone residual, storage, factor shapes") {
  const DenseMatrix a = oracle::gaussian(40, 40, 5);
  const DenseMatrix x = oracle::gaussian(40, 80, 6);
  const auto w = nsvd::whitener_cholesky(stats_of(x));
  const RankBudget b = nsvd::rank_budget(40, 40, 0.0, 0.95);
  REQUIRE(b.k1 == 19);
  REQUIRE(b.k2 == 1);
  for (auto kind : {nsvd::ResidualStage::kSvd, nsvd::ResidualStage::kInterpolative}) {
    const auto l = nsvd::compress_nested(a, w, b, kind);
    REQUIRE(l.stage2);
    const double stage1_only = nsvd::frobenius_norm(a - l.stage1.product());
    CHECK(nsvd::frobenius_norm(a - l.reconstruct()) <= stage1_only);
    CHECK(l.stored_entries() == (40 + 40) * 20);
    CHECK(l.stage2->w.rows() == 40);
    CHECK(l.stage2->w.cols() == 1);
    CHECK(l.stage2->z.rows() == 1);
  }
  const auto nid = nsvd::compress_nested(a, w, b, nsvd::ResidualStage::kInterpolative);
  CHECK(nid.method == Method::kNid1);
  REQUIRE(nid.stage2_columns.size() == 1);
  const DenseMatrix residual = a - nid.stage1.product();
  CHECK(nid.stage2->w == residual.select_columns(nid.stage2_columns));

  CHECK_THROWS_AS(nsvd::compress_nested(a, w, nsvd::rank_budget(40, 40, 0.0, 1.0), nsvd::ResidualStage::kSvd),
                  nsvd::ArgumentError);
  const auto diag = nsvd::whitener_diag_absmean(x);
  CHECK_THROWS_AS(nsvd::compress_nested(a, diag, b, nsvd::ResidualStage::kSvd), nsvd::ArgumentError);
}

TEST_CASE("nested compression of a matrix of whitened rank k1 leaves a zero residual") {
  const DenseMatrix x = oracle::gaussian(10, 30, 9);
  const auto w = nsvd::whitener_cholesky(stats_of(x));
  const DenseMatrix a = w.apply_inverse_right(oracle::gaussian(12, 3, 10) * oracle::gaussian(3, 10, 11));
  const RankBudget b{0.0, 4, 0.75, 3, 1};
  const auto l = nsvd::compress_nested(a, w, b, nsvd::ResidualStage::kSvd);
  CHECK(nsvd::frobenius_norm(a - l.stage1.product()) <= 1e-10 * nsvd::frobenius_norm(a));
  CHECK(nsvd::max_abs(l.stage2->product()) <= 1e-10 * nsvd::frobenius_norm(a));
}

TEST_CASE("nested vs ASVD-I on 32x24 over 1000 seeds") {
  // At ratio 0.3 and split 0.95 the budget is k = 9, k1 = 9, k2 = 0, so the
  // nested method degenerates to ASVD-I. The strict plain-loss gain is
  // checked where k2 >= 1.
  const RankBudget degenerate = nsvd::rank_budget(32, 24, 0.3, 0.95);
  CHECK(degenerate.k == 9);
  CHECK(degenerate.k2 == 0);

  struct Point {
    double ratio, split;
  };
  for (Point pt : {Point{0.1, 0.95}, Point{0.3, 0.8}}) {
    const RankBudget b = nsvd::rank_budget(32, 24, pt.ratio, pt.split);
    REQUIRE(b.k2 >= 1);
    const RankBudget flat = nsvd::rank_budget(32, 24, pt.ratio, 1.0);
    std::size_t strict = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      nsvd::Rng rng(seed);
      const DenseMatrix a = nsvd::gaussian_matrix(32, 24, rng);
      const DenseMatrix x = nsvd::gaussian_matrix(24, 64, rng);
      const auto w = nsvd::whitener_cholesky(stats_of(x));
      const auto nested = nsvd::compress_layer(a, Method::kNsvd1, &w, b);
      const auto asvd = nsvd::compress_layer(a, Method::kAsvd1, &w, flat);
      strict += nsvd::frobenius_norm(a - nested.reconstruct()) < nsvd::frobenius_norm(a - asvd.reconstruct());
      REQUIRE(act_loss(a, nested, x) >= act_loss(a, asvd, x) * (1 - 1e-10));
    }
    CHECK(strict == 1000);
  }

  nsvd::Rng rng(0);
  const DenseMatrix a = nsvd::gaussian_matrix(32, 24, rng);
  const DenseMatrix x = nsvd::gaussian_matrix(24, 64, rng);
  const auto w = nsvd::whitener_cholesky(stats_of(x));
  const auto n = nsvd::compress_layer(a, Method::kNsvd1, &w, degenerate);
  const auto f = nsvd::compress_layer(a, Method::kAsvd1, &w, nsvd::rank_budget(32, 24, 0.3, 1.0));
  CHECK(n.reconstruct() == f.reconstruct());
}

TEST_CASE("compress_layer dispatch and degeneration at split 1") {
  const DenseMatrix a = oracle::gaussian(12, 10, 40);
  const DenseMatrix x = oracle::gaussian(10, 30, 41);
  const auto s = stats_of(x);
  const auto chol = nsvd::whitener_cholesky(s);
  const auto eig = nsvd::whitener_eigen(s, nsvd::EigenVariant::kSqrt);
  const RankBudget one = nsvd::rank_budget(12, 10, 0.3, 1.0);
  const RankBudget split = nsvd::rank_budget(12, 10, 0.3, 0.95);

  const auto n1 = nsvd::compress_layer(a, Method::kNsvd1, &chol, one);
  const auto a1 = nsvd::compress_layer(a, Method::kAsvd1, &chol, split);
  CHECK(n1.method == Method::kAsvd1);
  CHECK(n1.stage1.w == a1.stage1.w);
  CHECK(n1.stage1.z == a1.stage1.z);
  CHECK(n1.budget == a1.budget);
  CHECK_FALSE(a1.stage2);

  const auto n2 = nsvd::compress_layer(a, Method::kNid2, &eig, one);
  CHECK(n2.method == Method::kAsvd2);

  CHECK_THROWS_AS(nsvd::compress_layer(a, Method::kAsvd1, nullptr, one), nsvd::ArgumentError);
  CHECK_THROWS_AS(nsvd::compress_layer(a, Method::kAsvd1, &eig, one), nsvd::ArgumentError);
  CHECK(nsvd::compress_layer(a, Method::kSvd, nullptr, split).method == Method::kSvd);
}

TEST_CASE("calibration optimality of ASVD-I across all methods") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nsvd::Rng rng(seed + 500);
    const DenseMatrix a = nsvd::gaussian_matrix(24, 20, rng);
    const DenseMatrix x = nsvd::gaussian_matrix(20, 60, rng);
    const auto s = stats_of(x);
    const nsvd::Whitener ws[] = {nsvd::whitener_diag_absmean(s), nsvd::whitener_cholesky(s),
                                 nsvd::whitener_eigen(s, nsvd::EigenVariant::kSqrt),
                                 nsvd::whitener_eigen(s, nsvd::EigenVariant::kGamma)};
    auto pick = [&](Method m) -> const nsvd::Whitener* {
      const auto k = nsvd::required_whitener(m);
      if (!k) return nullptr;
      for (const auto& w : ws)
        if (w.kind() == *k) return &w;
      return nullptr;
    };
    const RankBudget b = nsvd::rank_budget(24, 20, 0.4, 0.8);
    const double best = act_loss(a, nsvd::compress_layer(a, Method::kAsvd1, pick(Method::kAsvd1), b), x);
    for (Method m : nsvd::kAllMethods) {
      CHECK(act_loss(a, nsvd::compress_layer(a, m, pick(m), b), x) >= best * (1 - 1e-8));
    }
  }
}

TEST_CASE("apply is factor-first and counts multiply-adds") {
  const DenseMatrix a = oracle::gaussian(9, 7, 60);
  const DenseMatrix x = oracle::gaussian(7, 20, 61);
  const auto w = nsvd::whitener_cholesky(stats_of(x));
  const RankBudget b{0.0, 5, 0.8, 4, 1};
  const auto l = nsvd::compress_nested(a, w, b, nsvd::ResidualStage::kSvd);

  CHECK(nsvd::max_abs(nsvd::apply(l, DenseMatrix(7, 3))) == 0.0);
  CHECK(nsvd::relative_difference(nsvd::apply(l, DenseMatrix::identity(7)), l.reconstruct()) <= 1e-14);

  const DenseMatrix q = oracle::gaussian(7, 11, 62);
  nsvd::ApplyCounters c;
  const DenseMatrix out = nsvd::apply(l, q, &c);
  CHECK(nsvd::relative_difference(out, oracle::naive_product(l.reconstruct(), q)) <= 1e-10);
  CHECK(c.multiply_adds == (9 + 7) * 11 * 5);

  CHECK_THROWS_AS(nsvd::apply(l, DenseMatrix(6, 2)), nsvd::ArgumentError);
}
