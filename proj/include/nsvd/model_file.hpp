#pragma once

#include <map>
#include <string>

#include "nsvd/calibration.hpp"
#include "nsvd/compress.hpp"
#include "nsvd/container.hpp"

namespace nsvd {

// Compressed model files are ordinary containers. Each layer contributes
// `<layer>.w1`, `<layer>.z1`, optionally `<layer>.w2`, `<layer>.z2`, and a
// `<layer>.meta` f64 record:
//
//   [record version, method code, m, n, ratio, split, k, k1, k2,
//    fingerprint high 32 bits, fingerprint low 32 bits, damping, tau]
//
// Layers are written in name order.

inline constexpr std::size_t kMetaLength = 13;

using NamedLayers = std::map<std::string, CompressedLayer>;

TensorContainer encode_compressed_model(const NamedLayers& layers);
/// Throws FormatError if a metadata record is malformed or references
/// missing or mis-shaped factor tensors.
NamedLayers decode_compressed_model(const TensorContainer& c);

// Gram files hold `<layer>.gram` (n x n), `<layer>.abssum` (n) and
// `<layer>.count` (1) per calibrated layer.
using NamedGrams = std::map<std::string, GramStats>;

TensorContainer encode_gram_file(const NamedGrams& grams);
NamedGrams decode_gram_file(const TensorContainer& c);

}  // namespace nsvd
