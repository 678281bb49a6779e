#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nsvd/matrix.hpp"

namespace nsvd {

// Binary tensor container, little-endian throughout:
//
//   magic "NSVD" | version u32 | entry count u32
//   per entry: name length u16 | name bytes (UTF-8) | dtype u8 | ndim u8 |
//              dims u64 x ndim | raw row-major data
//
// dtype codes: 0 = f32, 2 = f64. Code 1 is reserved and rejected.

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 2 };

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::variant<std::vector<float>, std::vector<double>> data;

  DType dtype() const noexcept {
    return std::holds_alternative<std::vector<float>>(data) ? DType::kF32 : DType::kF64;
  }
  std::uint64_t element_count() const noexcept;

  static Tensor from_matrix(std::string name, const DenseMatrix& m);
  static Tensor from_vector(std::string name, std::vector<double> v);

  /// 2-d tensor as a matrix; f32 values are widened to f64.
  DenseMatrix to_matrix() const;
  /// All values widened to f64, in storage order.
  std::vector<double> to_vector() const;
};

class TensorContainer {
 public:
  std::uint32_t version = kContainerVersion;

  /// Appends an entry; throws ArgumentError on a duplicate name.
  void add(Tensor t);
  const Tensor* find(std::string_view name) const noexcept;
  const Tensor& at(std::string_view name) const;
  const std::vector<Tensor>& entries() const noexcept { return entries_; }

 private:
  std::vector<Tensor> entries_;
};

std::vector<std::uint8_t> encode_container(const TensorContainer& c);
/// Throws FormatError naming the byte offset of the first problem.
TensorContainer decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const TensorContainer& c);
TensorContainer read_container(const std::filesystem::path& path);

}  // namespace nsvd
