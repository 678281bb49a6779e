#include "nsvd/model_file.hpp"

#include <cmath>
#include <string>

#include "nsvd/error.hpp"

namespace nsvd {

namespace {

constexpr double kMetaVersion = 1.0;

const std::string kMetaSuffix = ".meta";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::size_t as_count(double v, const std::string& layer, const char* field) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 9.0e15) {
    throw FormatError("layer '" + layer + "': metadata field " + field + " is not a count");
  }
  return static_cast<std::size_t>(v);
}

DenseMatrix factor(const TensorContainer& c, const std::string& name, std::size_t rows,
                   std::size_t cols) {
  const Tensor* t = c.find(name);
  if (!t) throw FormatError("missing factor tensor '" + name + "'");
  if (t->dims.size() != 2 || t->dims[0] != rows || t->dims[1] != cols) {
    throw FormatError("factor tensor '" + name + "' has the wrong shape, expected " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  try {
    return t->to_matrix();
  } catch (const ArgumentError& e) {
    throw FormatError("factor tensor '" + name + "': " + e.what());
  }
}

}  // namespace

TensorContainer encode_compressed_model(const NamedLayers& layers) {
  TensorContainer c;
  for (const auto& [name, layer] : layers) {
    const auto fp = layer.whitener_fingerprint;
    std::vector<double> meta{kMetaVersion,
                             static_cast<double>(static_cast<int>(layer.method)),
                             static_cast<double>(layer.rows),
                             static_cast<double>(layer.cols),
                             layer.budget.ratio,
                             layer.budget.split,
                             static_cast<double>(layer.budget.k),
                             static_cast<double>(layer.budget.k1),
                             static_cast<double>(layer.budget.k2),
                             static_cast<double>(fp >> 32),
                             static_cast<double>(fp & 0xffffffffULL),
                             layer.damping,
                             layer.tau};
    c.add(Tensor::from_vector(name + kMetaSuffix, std::move(meta)));
    c.add(Tensor::from_matrix(name + ".w1", layer.stage1.w));
    c.add(Tensor::from_matrix(name + ".z1", layer.stage1.z));
    if (layer.stage2) {
      c.add(Tensor::from_matrix(name + ".w2", layer.stage2->w));
      c.add(Tensor::from_matrix(name + ".z2", layer.stage2->z));
    }
  }
  return c;
}

NamedLayers decode_compressed_model(const TensorContainer& c) {
  NamedLayers layers;
  for (const Tensor& t : c.entries()) {
    if (!ends_with(t.name, kMetaSuffix)) continue;
    const std::string name = t.name.substr(0, t.name.size() - kMetaSuffix.size());
    const std::vector<double> m = t.to_vector();
    if (m.size() != kMetaLength || m[0] != kMetaVersion) {
      throw FormatError("layer '" + name + "': malformed metadata record");
    }
    const std::size_t code = as_count(m[1], name, "method");
    if (code >= std::size(kAllMethods)) {
      throw FormatError("layer '" + name + "': unknown method code " + std::to_string(code));
    }
    CompressedLayer layer{.method = kAllMethods[code],
                          .rows = as_count(m[2], name, "m"),
                          .cols = as_count(m[3], name, "n"),
                          .budget = RankBudget{m[4], as_count(m[6], name, "k"), m[5],
                                               as_count(m[7], name, "k1"),
                                               as_count(m[8], name, "k2")},
                          .stage1 = FactorPair{DenseMatrix(1, 1), DenseMatrix(1, 1)},
                          .stage2 = std::nullopt,
                          .stage2_columns = {},
                          .whitener_fingerprint = 0,
                          .damping = m[11],
                          .tau = m[12]};
    const auto& b = layer.budget;
    if (b.k1 == 0 || b.k1 + b.k2 != b.k || layer.rows == 0 || layer.cols == 0) {
      throw FormatError("layer '" + name + "': inconsistent rank budget");
    }
    layer.whitener_fingerprint = (static_cast<std::uint64_t>(as_count(m[9], name, "fingerprint")) << 32) |
                                 static_cast<std::uint64_t>(as_count(m[10], name, "fingerprint"));
    layer.stage1 = FactorPair{factor(c, name + ".w1", layer.rows, b.k1),
                              factor(c, name + ".z1", b.k1, layer.cols)};
    if (b.k2 > 0) {
      layer.stage2 = FactorPair{factor(c, name + ".w2", layer.rows, b.k2),
                                factor(c, name + ".z2", b.k2, layer.cols)};
    }
    layers.emplace(name, std::move(layer));
  }
  return layers;
}

TensorContainer encode_gram_file(const NamedGrams& grams) {
  TensorContainer c;
  for (const auto& [name, stats] : grams) {
    c.add(Tensor::from_matrix(name + ".gram", stats.gram()));
    c.add(Tensor::from_vector(name + ".abssum", stats.abs_sums()));
    c.add(Tensor::from_vector(name + ".count", {static_cast<double>(stats.sample_count())}));
  }
  return c;
}

NamedGrams decode_gram_file(const TensorContainer& c) {
  const std::string suffix = ".gram";
  NamedGrams grams;
  for (const Tensor& t : c.entries()) {
    if (!ends_with(t.name, suffix)) continue;
    const std::string name = t.name.substr(0, t.name.size() - suffix.size());
    try {
      const std::vector<double> count = c.at(name + ".count").to_vector();
      if (count.size() != 1) throw FormatError("layer '" + name + "': malformed sample count");
      grams.emplace(name, GramStats::from_parts(t.to_matrix(), c.at(name + ".abssum").to_vector(),
                                                as_count(count[0], name, "count")));
    } catch (const ArgumentError& e) {
      throw FormatError("gram entry '" + name + "': " + e.what());
    }
  }
  return grams;
}

}  // namespace nsvd
