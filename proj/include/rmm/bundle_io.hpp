// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Bundle files.
//
// Packed (default): per layer "<layer>.W_all" ((m+d) x r x p),
// "<layer>.C_all" ((m+d) x n x p) and "<layer>.mu_all" ((m+d) x r).
// Unpacked: per position k "<layer>.pos<k>.W" (r x p), "<layer>.pos<k>.C"
// (n x p), "<layer>.pos<k>.mu" (r).
// Metadata: n, r, p, layout, and layer_shapes as a JSON array of
// {"name", "m", "d"} objects in layer order.

#include "json.hpp"

#include <string>
#include <vector>

#include "rmm/container.hpp"
#include "rmm/core.hpp"

namespace rmm {

enum class BundleLayout { kPacked, kUnpacked };

struct BundleWriteOptions {
  DType dtype = DType::kFloat32;
  BundleLayout layout = BundleLayout::kPacked;
};

namespace detail {

inline void append_row_major(std::vector<double>& out, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  }
}

inline TensorEntry make_entry(std::string name, std::vector<std::uint64_t> shape,
                              std::vector<double> values, DType dtype) {
  TensorEntry e{std::move(name), std::move(shape), {}};
  if (dtype == DType::kFloat32) {
    e.data = std::vector<float>(values.begin(), values.end());
  } else {
    e.data = std::move(values);
  }
  return e;
}

inline Matrix read_block(const TensorEntry& e, std::size_t offset, Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = e.at(offset + static_cast<std::size_t>(i * cols + j));
  }
  return out;
}

inline void expect_shape(const TensorEntry& e, const std::vector<std::uint64_t>& shape) {
  if (e.shape != shape) throw FormatError("tensor '" + e.name + "' has unexpected shape");
}

inline Index parse_index(const TensorContainer& c, const char* key) {
  auto v = c.meta(key);
  if (!v) throw FormatError(std::string("bundle metadata lacks '") + key + "'");
  try {
    std::size_t used = 0;
    long long parsed = std::stoll(*v, &used);
    if (used != v->size() || parsed < 0) throw std::invalid_argument(*v);
    return static_cast<Index>(parsed);
  } catch (const std::exception&) {
    throw FormatError(std::string("bundle metadata '") + key + "' is not a non-negative integer");
  }
}

}  // namespace detail

inline std::string layer_shapes_json(const std::vector<LayerShape>& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : layers) arr.push_back({{"name", l.name}, {"m", l.m}, {"d", l.d}});
  return arr.dump();
}

inline std::vector<LayerShape> parse_layer_shapes(const std::string& text) {
  std::vector<LayerShape> out;
  try {
    auto arr = nlohmann::json::parse(text);
    if (!arr.is_array()) throw FormatError("layer_shapes is not a JSON array");
    for (const auto& item : arr) {
      out.push_back({item.at("name").get<std::string>(), item.at("m").get<Index>(), item.at("d").get<Index>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed layer_shapes: ") + e.what());
  }
  return out;
}

inline TensorContainer bundle_to_container(const RmmBundle& bundle, BundleWriteOptions opts = {}) {
  bundle.validate();
  const auto n = static_cast<std::uint64_t>(bundle.n);
  const auto r = static_cast<std::uint64_t>(bundle.r);
  const auto p = static_cast<std::uint64_t>(bundle.p);

  TensorContainer c;
  c.set_meta("format", "rmm-bundle");
  c.set_meta("n", std::to_string(bundle.n));
  c.set_meta("r", std::to_string(bundle.r));
  c.set_meta("p", std::to_string(bundle.p));
  c.set_meta("layout", opts.layout == BundleLayout::kPacked ? "packed" : "unpacked");
  c.set_meta("layer_shapes", layer_shapes_json(bundle.layers));

  std::size_t pos = 0;
  for (const auto& layer : bundle.layers) {
    const auto count = static_cast<std::size_t>(layer.m + layer.d);
    if (opts.layout == BundleLayout::kPacked) {
      std::vector<double> w, cc, mu;
      for (std::size_t k = 0; k < count; ++k) {
        const auto& pb = bundle.positions[pos + k];
        detail::append_row_major(w, pb.w);
        detail::append_row_major(cc, pb.c);
        mu.insert(mu.end(), pb.mu.data(), pb.mu.data() + pb.mu.size());
      }
      c.add(detail::make_entry(layer.name + ".W_all", {count, r, p}, std::move(w), opts.dtype));
      c.add(detail::make_entry(layer.name + ".C_all", {count, n, p}, std::move(cc), opts.dtype));
      c.add(detail::make_entry(layer.name + ".mu_all", {count, r}, std::move(mu), opts.dtype));
    } else {
      for (std::size_t k = 0; k < count; ++k) {
        const auto& pb = bundle.positions[pos + k];
        const std::string base = layer.name + ".pos" + std::to_string(k);
        std::vector<double> w, cc;
        detail::append_row_major(w, pb.w);
        detail::append_row_major(cc, pb.c);
        c.add(detail::make_entry(base + ".W", {r, p}, std::move(w), opts.dtype));
        c.add(detail::make_entry(base + ".C", {n, p}, std::move(cc), opts.dtype));
        c.add(detail::make_entry(base + ".mu", {r},
                                 std::vector<double>(pb.mu.data(), pb.mu.data() + pb.mu.size()),
                                 opts.dtype));
      }
    }
    pos += count;
  }
  return c;
}

inline RmmBundle bundle_from_container(const TensorContainer& c) {
  if (c.meta("format").value_or("rmm-bundle") != "rmm-bundle") throw FormatError("not an RMM bundle");
  RmmBundle b;
  b.n = detail::parse_index(c, "n");
  b.r = detail::parse_index(c, "r");
  b.p = detail::parse_index(c, "p");
  auto shapes = c.meta("layer_shapes");
  if (!shapes) throw FormatError("bundle metadata lacks 'layer_shapes'");
  b.layers = parse_layer_shapes(*shapes);
  if (b.n < 2 || b.r < 1 || b.p < 1 || b.p > std::min(b.n, b.r)) throw FormatError("bundle has invalid n/r/p");
  for (const auto& l : b.layers) {
    if (l.m < 1 || l.d < 1) throw FormatError("bundle layer '" + l.name + "' has empty shape");
  }

  const auto n = static_cast<std::uint64_t>(b.n);
  const auto r = static_cast<std::uint64_t>(b.r);
  const auto p = static_cast<std::uint64_t>(b.p);
  const std::string layout = c.meta("layout").value_or("packed");
  if (layout != "packed" && layout != "unpacked") throw FormatError("unknown bundle layout '" + layout + "'");

  std::size_t expected_tensors = 0;
  for (const auto& layer : b.layers) {
    const auto count = static_cast<std::uint64_t>(layer.m + layer.d);
    if (layout == "packed") {
      const auto& w = c.get(layer.name + ".W_all");
      const auto& cc = c.get(layer.name + ".C_all");
      const auto& mu = c.get(layer.name + ".mu_all");
      detail::expect_shape(w, {count, r, p});
      detail::expect_shape(cc, {count, n, p});
      detail::expect_shape(mu, {count, r});
      for (std::uint64_t k = 0; k < count; ++k) {
        PositionBundle pb;
        pb.w = detail::read_block(w, k * r * p, b.r, b.p);
        pb.c = detail::read_block(cc, k * n * p, b.n, b.p);
        pb.mu = detail::read_block(mu, k * r, b.r, 1).col(0);
        b.positions.push_back(std::move(pb));
      }
      expected_tensors += 3;
    } else {
      for (std::uint64_t k = 0; k < count; ++k) {
        const std::string base = layer.name + ".pos" + std::to_string(k);
        const auto& w = c.get(base + ".W");
        const auto& cc = c.get(base + ".C");
        const auto& mu = c.get(base + ".mu");
        detail::expect_shape(w, {r, p});
        detail::expect_shape(cc, {n, p});
        detail::expect_shape(mu, {r});
        b.positions.push_back({detail::read_block(w, 0, b.r, b.p), detail::read_block(cc, 0, b.n, b.p),
                               detail::read_block(mu, 0, b.r, 1).col(0)});
        expected_tensors += 3;
      }
    }
  }
  if (expected_tensors != c.entries().size()) throw FormatError("bundle holds unexpected tensors");
  return b;
}

}  // namespace rmm
