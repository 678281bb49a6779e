#include <doctest.h>

#include <cmath>
#include <limits>

#include "nsvd/error.hpp"
#include "nsvd/matrix.hpp"
#include "oracles.hpp"

using nsvd::DenseMatrix;

TEST_CASE("construction checks length and finiteness") {
  DenseMatrix z(2, 3);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  for (double v : z.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(DenseMatrix(2, 2, {1.0, 2.0, 3.0}), nsvd::ArgumentError);
  CHECK_THROWS_AS(DenseMatrix(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}),
                  nsvd::ArgumentError);
  CHECK_THROWS_AS(DenseMatrix(1, 1, {std::numeric_limits<double>::infinity()}), nsvd::ArgumentError);
  CHECK_THROWS_AS(DenseMatrix(0, 3), nsvd::ArgumentError);
  CHECK_THROWS_AS((DenseMatrix{{1.0, 2.0}, {3.0}}), nsvd::ArgumentError);
}

TEST_CASE("row-major layout") {
  DenseMatrix m{{1, 2, 3}, {4, 5, 6}};
  const std::vector<double> expect{1, 2, 3, 4, 5, 6};
  CHECK(std::equal(m.values().begin(), m.values().end(), expect.begin()));
  CHECK(m(1, 0) == 4);
  CHECK(m.column(2) == std::vector<double>{3, 6});
  CHECK(m.transpose() == DenseMatrix{{1, 4}, {2, 5}, {3, 6}});
  CHECK(m.block(0, 1, 2, 2) == DenseMatrix{{2, 3}, {5, 6}});
  const std::vector<std::size_t> idx{2, 0};
  CHECK(m.select_columns(idx) == DenseMatrix{{3, 1}, {6, 4}});
}

TEST_CASE("products agree with the naive oracle") {
  const DenseMatrix a = oracle::gaussian(7, 5, 1);
  const DenseMatrix b = oracle::gaussian(5, 6, 2);
  const DenseMatrix c = oracle::gaussian(6, 5, 3);
  CHECK(nsvd::relative_difference(a * b, oracle::naive_product(a, b)) < 1e-14);
  CHECK(nsvd::relative_difference(nsvd::multiply_bt(a, c), oracle::naive_product(a, c.transpose())) <
        1e-14);
  const DenseMatrix d = oracle::gaussian(7, 4, 4);
  CHECK(nsvd::relative_difference(nsvd::multiply_at(a, d), oracle::naive_product(a.transpose(), d)) <
        1e-14);
  CHECK_THROWS_AS(a * a, nsvd::ArgumentError);
  CHECK_THROWS_AS(a + b, nsvd::ArgumentError);
}

TEST_CASE("scaling and norms") {
  DenseMatrix m{{1, 2}, {3, 4}};
  const std::vector<double> d{2, -1};
  CHECK(nsvd::scale_columns(m, d) == DenseMatrix{{2, -2}, {6, -4}});
  CHECK(nsvd::scale_rows(d, m) == DenseMatrix{{2, 4}, {-3, -4}});
  CHECK(nsvd::frobenius_norm(m) == doctest::Approx(std::sqrt(30.0)).epsilon(1e-15));
  CHECK(nsvd::max_abs(m) == 4.0);
  CHECK(nsvd::frobenius_norm(DenseMatrix(3, 3)) == 0.0);

  // Scaled accumulation must not overflow.
  DenseMatrix big{{1e200, 1e200}};
  CHECK(nsvd::frobenius_norm(big) == doctest::Approx(std::sqrt(2.0) * 1e200));
  DenseMatrix tiny{{1e-200, 1e-200}};
  CHECK(nsvd::frobenius_norm(tiny) == doctest::Approx(std::sqrt(2.0) * 1e-200));
}

TEST_CASE("identity and diagonal") {
  const std::vector<double> d{3, 2, 1};
  const DenseMatrix dm = DenseMatrix::diagonal(d);
  CHECK(dm(0, 0) == 3);
  CHECK(dm(1, 2) == 0);
  const DenseMatrix a = oracle::gaussian(3, 3, 9);
  CHECK(DenseMatrix::identity(3) * a == a);
}
