#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace nsvd {

/// Dense real matrix, row-major, 64-bit scalars.
///
/// Both dimensions are positive. Constructing from a data buffer validates the
/// length and rejects non-finite entries; element access afterwards is
/// unchecked.
class DenseMatrix {
 public:
  /// Zero-filled rows x cols matrix.
  DenseMatrix(std::size_t rows, std::size_t cols);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> d);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double> column(std::size_t j) const;
  void set_column(std::size_t j, std::span<const double> v);

  DenseMatrix transpose() const;
  /// Rows [r0, r0+nr) and columns [c0, c0+nc).
  DenseMatrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  /// Columns listed in `idx`, in that order.
  DenseMatrix select_columns(std::span<const std::size_t> idx) const;

  bool all_finite() const noexcept;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator*(double s, const DenseMatrix& a);

/// a * b^T without forming the transpose.
DenseMatrix multiply_bt(const DenseMatrix& a, const DenseMatrix& b);
/// a^T * b without forming the transpose.
DenseMatrix multiply_at(const DenseMatrix& a, const DenseMatrix& b);

/// a * diag(d): scales column j by d[j].
DenseMatrix scale_columns(const DenseMatrix& a, std::span<const double> d);
/// diag(d) * a: scales row i by d[i].
DenseMatrix scale_rows(std::span<const double> d, const DenseMatrix& a);

double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
/// ||a - b||_F / max(||b||_F, tiny).
double relative_difference(const DenseMatrix& a, const DenseMatrix& b);

}  // namespace nsvd
