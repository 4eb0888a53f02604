// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reversible merging of low-rank adapters.
//
// A "task vector position" is one row index of A or one column index of B in a
// layer. For each position the n task vectors (one per model, each of length r)
// are stacked into X (n x r), centered by their mean mu, and summarized by the
// top-p right singular vectors W (r x p) of the centered matrix together with
// the coefficients C = X_c W (n x p). Model i is recovered as W c_i + mu.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rmm/linalg.hpp"
#include "rmm/lowrank.hpp"
#include "rmm/parallel.hpp"

namespace rmm {

enum class Side { kARow, kBCol };

struct PositionId {
  std::size_t layer = 0;
  Side side = Side::kARow;
  Index index = 0;
};

struct TaskVectorMatrix {
  Matrix x;  // n x r, row i belongs to model i
  PositionId position;
};

struct PositionBundle {
  Matrix w;   // r x p, orthonormal columns
  Matrix c;   // n x p
  Vector mu;  // r
};

struct LayerShape {
  std::string name;
  Index m = 0;
  Index d = 0;

  bool operator==(const LayerShape&) const = default;
};

/// Merged representation of n adapters. Positions are layer-major; within a
/// layer all m A-row positions come first, then the d B-column positions.
struct RmmBundle {
  Index n = 0;
  Index r = 0;
  Index p = 0;
  std::vector<LayerShape> layers;
  std::vector<PositionBundle> positions;

  std::size_t layer_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += static_cast<std::size_t>(layers[l].m + layers[l].d);
    return off;
  }

  const PositionBundle& at(std::size_t layer, Side side, Index idx) const {
    const auto& shape = layers.at(layer);
    const Index limit = side == Side::kARow ? shape.m : shape.d;
    if (idx < 0 || idx >= limit) throw std::out_of_range("position index out of range");
    return positions[layer_offset(layer) + static_cast<std::size_t>(side == Side::kARow ? idx : shape.m + idx)];
  }

  void validate() const {
    if (n < 2 || r < 1 || p < 1 || p > std::min(n, r)) {
      throw std::invalid_argument("bundle has invalid n/r/p (" + std::to_string(n) + "/" +
                                  std::to_string(r) + "/" + std::to_string(p) + ")");
    }
    std::size_t expected = 0;
    for (const auto& l : layers) {
      if (l.m < 1 || l.d < 1) throw std::invalid_argument("bundle layer '" + l.name + "' has empty shape");
      expected += static_cast<std::size_t>(l.m + l.d);
    }
    if (positions.size() != expected) {
      throw std::invalid_argument("bundle holds " + std::to_string(positions.size()) +
                                  " positions, layers require " + std::to_string(expected));
    }
    for (const auto& pb : positions) {
      if (pb.w.rows() != r || pb.w.cols() != p || pb.c.rows() != n || pb.c.cols() != p ||
          pb.mu.size() != r) {
        throw std::invalid_argument("bundle position has inconsistent W/C/mu shapes");
      }
    }
  }
};

inline TaskVectorMatrix gather_position(const AdapterSet& set, std::size_t layer, Side side, Index idx) {
  if (set.n() == 0 || layer >= set.layer_count()) throw std::out_of_range("layer index out of range");
  const auto& ref = set.layer(0, layer);
  const Index limit = side == Side::kARow ? ref.m() : ref.d();
  if (idx < 0 || idx >= limit) {
    throw std::out_of_range("position " + std::to_string(idx) + " outside [0, " +
                            std::to_string(limit) + ") for layer '" + ref.layer_name + "'");
  }
  TaskVectorMatrix out{Matrix(static_cast<Index>(set.n()), ref.rank()), {layer, side, idx}};
  for (std::size_t i = 0; i < set.n(); ++i) {
    const auto& lr = set.layer(i, layer);
    if (side == Side::kARow) {
      out.x.row(static_cast<Index>(i)) = lr.a.row(idx);
    } else {
      out.x.row(static_cast<Index>(i)) = lr.b.col(idx).transpose();
    }
  }
  return out;
}

/// Returns (X - 1 mu^T, mu) with mu the row mean.
inline std::pair<Matrix, Vector> center(const Matrix& x) {
  if (x.rows() < 1) throw std::invalid_argument("cannot center an empty task-vector matrix");
  Vector mu = x.colwise().mean().transpose();
  // A constant column keeps its exact value, so identical models center to 0.
  for (Index j = 0; j < x.cols(); ++j) {
    if ((x.col(j).array() == x(0, j)).all()) mu(j) = x(0, j);
  }
  Matrix centered = x.rowwise() - mu.transpose();
  return {std::move(centered), std::move(mu)};
}

namespace detail {

struct BasisWithRank {
  Matrix w;
  Index data_rank;  // leading columns of w that come from the data
};

inline BasisWithRank basis_with_rank(const Matrix& x_centered, Index p) {
  if (p < 1 || p > std::min(x_centered.rows(), x_centered.cols())) {
    throw std::invalid_argument("p = " + std::to_string(p) + " outside [1, min(n, r) = " +
                                std::to_string(std::min(x_centered.rows(), x_centered.cols())) + "]");
  }
  auto svd = canonical_svd(x_centered);
  const Index keep = std::min(p, svd.rank);
  return {complete_orthonormal(svd.v.leftCols(keep), p), keep};
}

}  // namespace detail

/// Top-p right singular vectors of the centered data: the orthonormal basis
/// minimizing ||X - X W W^T||_F^2.
inline Matrix optimal_basis(const Matrix& x_centered, Index p) {
  return detail::basis_with_rank(x_centered, p).w;
}

/// C = X_c W, the least-squares coefficients for an orthonormal W.
inline Matrix coefficients(const Matrix& x_centered, const Matrix& w) {
  if (x_centered.cols() != w.rows()) {
    throw std::invalid_argument("coefficients: X has " + std::to_string(x_centered.cols()) +
                                " columns but W has " + std::to_string(w.rows()) + " rows");
  }
  return x_centered * w;
}

/// Merges one stacked task-vector matrix. Basis directions added beyond the
/// numerical rank of the centered data carry exactly zero coefficients.
inline PositionBundle merge_position(const Matrix& x, Index p) {
  auto [centered, mu] = center(x);
  auto basis = detail::basis_with_rank(centered, p);
  Matrix c = coefficients(centered, basis.w);
  c.rightCols(p - basis.data_rank).setZero();
  return {std::move(basis.w), std::move(c), std::move(mu)};
}

inline RmmBundle merge_rmm(const AdapterSet& set, Index p, Parallelism par = {}) {
  set.validate();
  RmmBundle bundle;
  bundle.n = static_cast<Index>(set.n());
  bundle.r = set.layer(0, 0).rank();
  bundle.p = p;
  for (std::size_t l = 0; l < set.layer_count(); ++l) {
    const auto& ref = set.layer(0, l);
    if (ref.rank() != bundle.r) {
      throw std::invalid_argument("layer '" + ref.layer_name + "' has rank " + std::to_string(ref.rank()) +
                                  "; a bundle requires one rank across layers (" + std::to_string(bundle.r) + ")");
    }
    bundle.layers.push_back({ref.layer_name, ref.m(), ref.d()});
  }
  if (p < 1 || p > std::min(bundle.n, bundle.r)) {
    throw std::invalid_argument("p = " + std::to_string(p) + " outside [1, min(n, r) = " +
                                std::to_string(std::min(bundle.n, bundle.r)) + "]");
  }

  std::vector<PositionId> ids;
  for (std::size_t l = 0; l < bundle.layers.size(); ++l) {
    for (Index i = 0; i < bundle.layers[l].m; ++i) ids.push_back({l, Side::kARow, i});
    for (Index j = 0; j < bundle.layers[l].d; ++j) ids.push_back({l, Side::kBCol, j});
  }
  bundle.positions.resize(ids.size());
  parallel_for(ids.size(), par, [&](std::size_t k) {
    const auto& id = ids[k];
    bundle.positions[k] = merge_position(gather_position(set, id.layer, id.side, id.index).x, p);
  });
  return bundle;
}

/// x_hat_i = W c_i + mu
inline Vector reconstruct_vector(const PositionBundle& pb, Index i) {
  if (i < 0 || i >= pb.c.rows()) {
    throw std::out_of_range("model index " + std::to_string(i) + " outside [0, " +
                            std::to_string(pb.c.rows()) + ")");
  }
  return pb.w * pb.c.row(i).transpose() + pb.mu;
}

inline Adapter reconstruct_adapter(const RmmBundle& bundle, Index i, Parallelism par = {}) {
  if (i < 0 || i >= bundle.n) {
    throw std::out_of_range("task index " + std::to_string(i) + " outside valid range [0, " +
                            std::to_string(bundle.n - 1) + "]");
  }
  Adapter out;
  out.model_id = std::to_string(i);
  for (const auto& shape : bundle.layers) {
    out.layers.push_back({shape.name, Matrix(shape.m, bundle.r), Matrix(bundle.r, shape.d)});
  }
  struct Slot {
    std::size_t layer;
    Index local;  // < m: A row, otherwise B column (local - m)
  };
  std::vector<Slot> slots;
  slots.reserve(bundle.positions.size());
  for (std::size_t l = 0; l < bundle.layers.size(); ++l) {
    for (Index k = 0; k < bundle.layers[l].m + bundle.layers[l].d; ++k) slots.push_back({l, k});
  }
  if (slots.size() != bundle.positions.size()) throw std::invalid_argument("bundle position count mismatch");
  parallel_for(slots.size(), par, [&](std::size_t k) {
    const auto& slot = slots[k];
    Vector x_hat = reconstruct_vector(bundle.positions[k], i);
    auto& lr = out.layers[slot.layer];
    const Index m = bundle.layers[slot.layer].m;
    if (slot.local < m) {
      lr.a.row(slot.local) = x_hat.transpose();
    } else {
      lr.b.col(slot.local - m) = x_hat;
    }
  });
  return out;
}

/// sum_i ||x_i - x_hat_i||^2
inline double reconstruction_objective(const Matrix& x, const PositionBundle& pb) {
  if (x.rows() != pb.c.rows() || x.cols() != pb.w.rows() || pb.mu.size() != x.cols() ||
      pb.w.cols() != pb.c.cols()) {
    throw std::invalid_argument("reconstruction_objective: shape mismatch");
  }
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    total += (x.row(i).transpose() - reconstruct_vector(pb, i)).squaredNorm();
  }
  return total;
}

struct TraceIdentity {
  double lhs;  // ||X - X W W^T||_F^2
  double rhs;  // Tr(X^T X) - Tr(W^T X^T X W)
};

/// Evaluates both sides of ||X - XWW^T||_F^2 = Tr(X^T X) - Tr(W^T X^T X W),
/// which holds for any W with orthonormal columns.
inline TraceIdentity trace_identity_check(const Matrix& x_centered, const Matrix& w) {
  if (x_centered.cols() != w.rows()) throw std::invalid_argument("trace_identity_check: shape mismatch");
  const Matrix xw = x_centered * w;
  const double lhs = (x_centered - xw * w.transpose()).squaredNorm();
  const double rhs = (x_centered.transpose() * x_centered).trace() - (xw.transpose() * xw).trace();
  return {lhs, rhs};
}

}  // namespace rmm
