#include "nsvd/container.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <unordered_set>

#include "nsvd/error.hpp"

namespace nsvd {

namespace {

constexpr std::uint8_t kMagic[4] = {'N', 'S', 'V', 'D'};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return b_.size() - pos_; }

  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get_le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get_le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get_le(4, what)); }
  std::uint64_t u64(const char* what) { return get_le(8, what); }

  std::span<const std::uint8_t> take(std::uint64_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated file while reading ") + what + ": expected " +
                            std::to_string(n) + " bytes, found " + std::to_string(remaining()),
                        pos_);
    }
  }

 private:
  std::uint64_t get_le(int n, const char* what) {
    need(static_cast<std::uint64_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::uint64_t>(n);
    return v;
  }

  std::span<const std::uint8_t> b_;
  std::uint64_t pos_ = 0;
};

std::uint64_t checked_product(const std::vector<std::uint64_t>& dims, std::uint64_t elem_size,
                              std::uint64_t offset) {
  std::uint64_t n = elem_size;
  for (std::uint64_t d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw FormatError("tensor byte length overflows 64 bits", offset);
    }
    n *= d;
  }
  return n;
}

}  // namespace

std::uint64_t Tensor::element_count() const noexcept {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) n *= d;
  return n;
}

Tensor Tensor::from_matrix(std::string name, const DenseMatrix& m) {
  return Tensor{std::move(name),
                {m.rows(), m.cols()},
                std::vector<double>(m.values().begin(), m.values().end())};
}

Tensor Tensor::from_vector(std::string name, std::vector<double> v) {
  const std::uint64_t n = v.size();
  return Tensor{std::move(name), {n}, std::move(v)};
}

std::vector<double> Tensor::to_vector() const {
  if (const auto* f = std::get_if<std::vector<float>>(&data)) {
    return std::vector<double>(f->begin(), f->end());
  }
  return std::get<std::vector<double>>(data);
}

DenseMatrix Tensor::to_matrix() const {
  if (dims.size() != 2) {
    throw ArgumentError("tensor '" + name + "' has " + std::to_string(dims.size()) +
                        " dimensions, expected 2");
  }
  return DenseMatrix(static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                     to_vector());
}

void TensorContainer::add(Tensor t) {
  if (find(t.name) != nullptr) throw ArgumentError("duplicate tensor name '" + t.name + "'");
  if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ArgumentError("tensor name longer than 65535 bytes");
  }
  if (t.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw ArgumentError("tensor '" + t.name + "' has more than 255 dimensions");
  }
  const std::uint64_t have = std::visit([](const auto& v) -> std::uint64_t { return v.size(); }, t.data);
  if (have != t.element_count()) {
    throw ArgumentError("tensor '" + t.name + "' holds " + std::to_string(have) +
                        " values but its dims describe " + std::to_string(t.element_count()));
  }
  entries_.push_back(std::move(t));
}

const Tensor* TensorContainer::find(std::string_view name) const noexcept {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Tensor& t) { return t.name == name; });
  return it == entries_.end() ? nullptr : &*it;
}

const Tensor& TensorContainer::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) throw FormatError("container has no tensor named '" + std::string(name) + "'");
  return *t;
}

std::vector<std::uint8_t> encode_container(const TensorContainer& c) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(c.version);
  w.u32(static_cast<std::uint32_t>(c.entries().size()));
  for (const Tensor& t : c.entries()) {
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes({reinterpret_cast<const std::uint8_t*>(t.name.data()), t.name.size()});
    w.u8(static_cast<std::uint8_t>(t.dtype()));
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) w.u64(d);
    if (const auto* f = std::get_if<std::vector<float>>(&t.data)) {
      for (float v : *f) w.u32(std::bit_cast<std::uint32_t>(v));
    } else {
      for (double v : std::get<std::vector<double>>(t.data)) w.u64(std::bit_cast<std::uint64_t>(v));
    }
  }
  return w.take();
}

TensorContainer decode_container(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("bad magic, expected \"NSVD\"", 0);
  }
  const std::uint64_t version_at = r.offset();
  TensorContainer c;
  c.version = r.u32("version");
  if (c.version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(c.version), version_at);
  }
  const std::uint32_t count = r.u32("entry count");

  std::unordered_set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint64_t entry_at = r.offset();
    const std::uint16_t name_len = r.u16("name length");
    auto name_bytes = r.take(name_len, "name");
    Tensor t;
    t.name.assign(name_bytes.begin(), name_bytes.end());
    if (!seen.insert(t.name).second) {
      throw FormatError("duplicate tensor name '" + t.name + "'", entry_at);
    }
    const std::uint64_t dtype_at = r.offset();
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != static_cast<std::uint8_t>(DType::kF32) &&
        dtype != static_cast<std::uint8_t>(DType::kF64)) {
      throw FormatError("invalid dtype code " + std::to_string(dtype) + " for tensor '" + t.name + "'",
                        dtype_at);
    }
    const std::uint8_t ndim = r.u8("ndim");
    t.dims.resize(ndim);
    for (auto& d : t.dims) d = r.u64("dims");

    const std::uint64_t elem = dtype == static_cast<std::uint8_t>(DType::kF32) ? 4 : 8;
    const std::uint64_t nbytes = checked_product(t.dims, elem, r.offset());
    auto raw = r.take(nbytes, "tensor data");
    const std::uint64_t n = nbytes / elem;
    if (elem == 4) {
      std::vector<float> v(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
        v[i] = std::bit_cast<float>(bits);
      }
      t.data = std::move(v);
    } else {
      std::vector<double> v(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(raw[i * 8 + b]) << (8 * b);
        v[i] = std::bit_cast<double>(bits);
      }
      t.data = std::move(v);
    }
    c.add(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the last entry",
                      r.offset());
  }
  return c;
}

void write_container(const std::filesystem::path& path, const TensorContainer& c) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace nsvd
