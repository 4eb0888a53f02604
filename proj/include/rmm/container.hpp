// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Named-tensor container ("RMMT").
//
// Layout, all integers little-endian, no padding:
//   magic "RMMT" | version u32 | metadata_count u32
//   | { key_len u32, key bytes, val_len u32, val bytes } * metadata_count
//   | tensor_count u32
//   | { name_len u32, name bytes, dtype u8, ndim u8, dims u64 * ndim, data } * tensor_count
// dtype 0 = float32, 1 = float64; data is row-major IEEE-754.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

namespace rmm {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

/// Raised for every malformed or unreadable container.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

inline std::string_view dtype_name(DType t) {
  return t == DType::kFloat32 ? "float32" : "float64";
}

struct TensorEntry {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::variant<std::vector<float>, std::vector<double>> data;

  DType dtype() const {
    return std::holds_alternative<std::vector<float>>(data) ? DType::kFloat32 : DType::kFloat64;
  }
  std::size_t size() const {
    return std::visit([](const auto& v) { return v.size(); }, data);
  }
  double at(std::size_t i) const {
    return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data);
  }

  friend bool operator==(const TensorEntry& a, const TensorEntry& b) {
    if (a.name != b.name || a.shape != b.shape || a.dtype() != b.dtype() || a.size() != b.size()) {
      return false;
    }
    // Bitwise so that NaN payloads and signed zeros count.
    return std::visit(
        [&](const auto& va) {
          using V = std::decay_t<decltype(va)>;
          const auto& vb = std::get<V>(b.data);
          return va.empty() || std::memcmp(va.data(), vb.data(), va.size() * sizeof(va[0])) == 0;
        },
        a.data);
  }
};

/// Product of dims, or nullopt on overflow of size_t.
inline std::optional<std::size_t> shape_product(std::span<const std::uint64_t> shape) {
  std::size_t total = 1;
  for (auto dim : shape) {
    if (dim > std::numeric_limits<std::size_t>::max()) return std::nullopt;
    if (dim != 0 && total > std::numeric_limits<std::size_t>::max() / dim) return std::nullopt;
    total *= static_cast<std::size_t>(dim);
  }
  return total;
}

class TensorContainer;
inline TensorContainer read_container(std::span<const std::byte> bytes);

class TensorContainer {
 public:
  static constexpr std::uint32_t kVersion = 1;

  const std::vector<TensorEntry>& entries() const { return entries_; }
  const std::vector<std::pair<std::string, std::string>>& metadata() const { return metadata_; }

  /// Appends an entry; rejects empty/duplicate names and shape/data mismatches.
  void add(TensorEntry entry) {
    if (entry.name.empty()) throw std::invalid_argument("tensor name must be non-empty");
    if (index_.contains(entry.name)) {
      throw std::invalid_argument("duplicate tensor name '" + entry.name + "'");
    }
    if (entry.shape.size() > 255) throw std::invalid_argument("tensor rank exceeds 255");
    auto expected = shape_product(entry.shape);
    if (!expected || *expected != entry.size()) {
      throw std::invalid_argument("shape/data length mismatch for '" + entry.name + "'");
    }
    index_.insert(entry.name);
    entries_.push_back(std::move(entry));
  }

  void add_f64(std::string name, std::vector<std::uint64_t> shape, std::vector<double> data) {
    add(TensorEntry{std::move(name), std::move(shape), std::move(data)});
  }
  void add_f32(std::string name, std::vector<std::uint64_t> shape, std::vector<float> data) {
    add(TensorEntry{std::move(name), std::move(shape), std::move(data)});
  }

  void set_meta(std::string key, std::string value) {
    for (auto& [k, v] : metadata_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    metadata_.emplace_back(std::move(key), std::move(value));
  }

  std::optional<std::string> meta(std::string_view key) const {
    for (const auto& [k, v] : metadata_) {
      if (k == key) return v;
    }
    return std::nullopt;
  }

  const TensorEntry* find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  const TensorEntry& get(std::string_view name) const {
    if (const auto* e = find(name)) return *e;
    throw FormatError("missing tensor '" + std::string(name) + "'");
  }

  bool operator==(const TensorContainer& o) const {
    return entries_ == o.entries_ && metadata_ == o.metadata_;
  }

 private:
  // Metadata is appended without a uniqueness check when read back from a stream.
  friend TensorContainer read_container(std::span<const std::byte> bytes);

  std::vector<TensorEntry> entries_;
  std::vector<std::pair<std::string, std::string>> metadata_;
  std::unordered_set<std::string> index_;
};

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::byte>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    std::byte raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out_.insert(out_.end(), raw, raw + sizeof(T));
  }
  void put_string(std::string_view s) {
    if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("string too long for container");
    }
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    const auto* p = reinterpret_cast<const std::byte*>(s.data());
    out_.insert(out_.end(), p, p + s.size());
  }
  template <typename T>
  void put_array(const std::vector<T>& v) {
    const auto* p = reinterpret_cast<const std::byte*>(v.data());
    out_.insert(out_.end(), p, p + v.size() * sizeof(T));
  }

 private:
  std::vector<std::byte>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> in) : in_(in) {}

  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("truncated container");
  }
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string() {
    auto len = get<std::uint32_t>();
    need(len);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  template <typename T>
  std::vector<T> get_array(std::size_t count) {
    if (count > (in_.size() - pos_) / sizeof(T)) throw FormatError("truncated container");
    std::vector<T> v(count);
    if (count != 0) std::memcpy(v.data(), in_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::byte> serialize_container(const TensorContainer& c) {
  std::vector<std::byte> out;
  detail::ByteWriter w(out);
  out.insert(out.end(), {std::byte{'R'}, std::byte{'M'}, std::byte{'M'}, std::byte{'T'}});
  w.put<std::uint32_t>(TensorContainer::kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.metadata().size()));
  for (const auto& [k, v] : c.metadata()) {
    w.put_string(k);
    w.put_string(v);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.entries().size()));
  for (const auto& e : c.entries()) {
    auto expected = shape_product(e.shape);
    if (!expected || *expected != e.size()) {
      throw std::invalid_argument("shape/data length mismatch for '" + e.name + "'");
    }
    w.put_string(e.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dtype()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    for (auto dim : e.shape) w.put<std::uint64_t>(dim);
    std::visit([&](const auto& v) { w.put_array(v); }, e.data);
  }
  return out;
}

/// Writes `c` to `sink` and returns the byte count.
inline std::size_t write_container(const TensorContainer& c, std::ostream& sink) {
  auto bytes = serialize_container(c);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw FormatError("write failure");
  return bytes.size();
}

inline TensorContainer read_container(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), "RMMT", 4) != 0) throw FormatError("bad magic");
  r.get<std::uint32_t>();
  auto version = r.get<std::uint32_t>();
  if (version != TensorContainer::kVersion) {
    throw FormatError("unsupported version " + std::to_string(version));
  }

  TensorContainer c;
  auto meta_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    auto key = r.get_string();
    auto value = r.get_string();
    c.metadata_.emplace_back(std::move(key), std::move(value));
  }

  auto tensor_count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    TensorEntry e;
    e.name = r.get_string();
    if (e.name.empty()) throw FormatError("empty tensor name");
    if (c.index_.contains(e.name)) throw FormatError("duplicate tensor name '" + e.name + "'");
    auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw FormatError("unknown dtype " + std::to_string(dtype));
    auto ndim = r.get<std::uint8_t>();
    e.shape = r.get_array<std::uint64_t>(ndim);
    auto count = shape_product(e.shape);
    if (!count) throw FormatError("shape product overflows for '" + e.name + "'");
    if (dtype == 0) {
      e.data = r.get_array<float>(*count);
    } else {
      e.data = r.get_array<double>(*count);
    }
    c.index_.insert(e.name);
    c.entries_.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("trailing bytes after container");
  return c;
}

inline TensorContainer read_container(std::istream& source) {
  std::vector<char> raw((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  if (source.bad()) throw FormatError("read failure");
  return read_container(std::as_bytes(std::span<const char>(raw)));
}

inline TensorContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return read_container(in);
}

inline std::size_t save_container(const TensorContainer& c, const std::filesystem::path& path) {
  auto bytes = serialize_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failure on '" + path.string() + "'");
  return bytes.size();
}

}  // namespace rmm
