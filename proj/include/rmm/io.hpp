// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Naming conventions on top of the tensor container:
//   adapter file:  "<layer>.A" (m x r), "<layer>.B" (r x d); metadata rank, model_id
//   delta file:    "<layer>.delta" (m x d)
//   weights file:  "<layer>" (m x d), any 2-D tensor

#include <string>
#include <string_view>
#include <vector>

#include "rmm/container.hpp"
#include "rmm/linalg.hpp"
#include "rmm/lowrank.hpp"

namespace rmm {

/// Row-major copy of `m` in the requested dtype.
inline TensorEntry matrix_entry(std::string name, const Matrix& m, DType dtype) {
  const auto rows = static_cast<std::uint64_t>(m.rows());
  const auto cols = static_cast<std::uint64_t>(m.cols());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  std::vector<double> values(rm.data(), rm.data() + rm.size());
  TensorEntry e{std::move(name), {rows, cols}, {}};
  if (dtype == DType::kFloat32) {
    e.data = std::vector<float>(values.begin(), values.end());
  } else {
    e.data = std::move(values);
  }
  return e;
}

inline Matrix entry_matrix(const TensorEntry& e) {
  if (e.shape.size() != 2) {
    throw FormatError("tensor '" + e.name + "' is not 2-D (ndim " + std::to_string(e.shape.size()) + ")");
  }
  const auto rows = static_cast<Index>(e.shape[0]);
  const auto cols = static_cast<Index>(e.shape[1]);
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = e.at(static_cast<std::size_t>(i * cols + j));
  }
  return out;
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

inline TensorContainer adapter_to_container(const Adapter& adapter, DType dtype = DType::kFloat64) {
  TensorContainer c;
  if (!adapter.layers.empty()) c.set_meta("rank", std::to_string(adapter.layers.front().rank()));
  c.set_meta("model_id", adapter.model_id);
  for (const auto& lr : adapter.layers) {
    lr.validate();
    c.add(matrix_entry(lr.layer_name + ".A", lr.a, dtype));
    c.add(matrix_entry(lr.layer_name + ".B", lr.b, dtype));
  }
  return c;
}

/// Layer order follows the order of the "<layer>.A" tensors.
inline Adapter adapter_from_container(const TensorContainer& c) {
  Adapter out;
  out.model_id = c.meta("model_id").value_or("");
  for (const auto& e : c.entries()) {
    if (ends_with(e.name, ".A")) {
      std::string layer = e.name.substr(0, e.name.size() - 2);
      LowRankDelta lr{layer, entry_matrix(e), entry_matrix(c.get(layer + ".B"))};
      try {
        lr.validate();
      } catch (const std::invalid_argument& err) {
        throw FormatError(err.what());
      }
      out.layers.push_back(std::move(lr));
    } else if (!ends_with(e.name, ".B")) {
      throw FormatError("unexpected tensor '" + e.name + "' in adapter file");
    } else if (!c.find(e.name.substr(0, e.name.size() - 2) + ".A")) {
      throw FormatError("tensor '" + e.name + "' has no matching A factor");
    }
  }
  if (out.layers.empty()) throw FormatError("adapter file holds no layers");
  if (auto rank = c.meta("rank")) {
    for (const auto& lr : out.layers) {
      if (std::to_string(lr.rank()) != *rank) {
        throw FormatError("layer '" + lr.layer_name + "' has rank " + std::to_string(lr.rank()) +
                          " but metadata says " + *rank);
      }
    }
  }
  return out;
}

inline TensorContainer deltas_to_container(const std::vector<LayerDelta>& deltas,
                                           DType dtype = DType::kFloat64) {
  TensorContainer c;
  for (const auto& d : deltas) c.add(matrix_entry(d.layer_name + ".delta", d.delta, dtype));
  return c;
}

inline std::vector<LayerDelta> deltas_from_container(const TensorContainer& c) {
  std::vector<LayerDelta> out;
  for (const auto& e : c.entries()) {
    if (!ends_with(e.name, ".delta")) throw FormatError("unexpected tensor '" + e.name + "' in delta file");
    out.push_back({e.name.substr(0, e.name.size() - 6), entry_matrix(e)});
  }
  return out;
}

/// Every 2-D tensor of a weights file, as (name, matrix), in file order.
inline std::vector<std::pair<std::string, Matrix>> weights_from_container(const TensorContainer& c) {
  std::vector<std::pair<std::string, Matrix>> out;
  for (const auto& e : c.entries()) {
    if (e.shape.size() == 2) out.emplace_back(e.name, entry_matrix(e));
  }
  return out;
}

}  // namespace rmm
