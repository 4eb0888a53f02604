// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rmm/linalg.hpp"

namespace rmm {

/// Full weight update of one layer, m x d.
struct LayerDelta {
  std::string layer_name;
  Matrix delta;

  Index m() const { return delta.rows(); }
  Index d() const { return delta.cols(); }
};

/// Factored update A (m x r) * B (r x d).
struct LowRankDelta {
  std::string layer_name;
  Matrix a;
  Matrix b;

  Index m() const { return a.rows(); }
  Index d() const { return b.cols(); }
  Index rank() const { return a.cols(); }

  void validate() const {
    if (a.cols() != b.rows()) {
      throw std::invalid_argument("layer '" + layer_name + "': A has " + std::to_string(a.cols()) +
                                  " columns but B has " + std::to_string(b.rows()) + " rows");
    }
    if (a.cols() < 1) throw std::invalid_argument("layer '" + layer_name + "': rank must be >= 1");
  }
};

/// One task's adapter: a LowRankDelta per layer.
struct Adapter {
  std::string model_id;
  std::vector<LowRankDelta> layers;
};

/// n adapters over identical layer names, shapes and ranks.
struct AdapterSet {
  std::vector<Adapter> models;

  std::size_t n() const { return models.size(); }
  std::size_t layer_count() const { return models.empty() ? 0 : models.front().layers.size(); }
  const LowRankDelta& layer(std::size_t model, std::size_t l) const {
    return models.at(model).layers.at(l);
  }

  /// Throws std::invalid_argument unless n >= 2 and all models agree layer by layer.
  void validate() const {
    if (models.size() < 2) throw std::invalid_argument("an adapter set needs at least 2 models");
    const auto& ref = models.front().layers;
    if (ref.empty()) throw std::invalid_argument("adapters have no layers");
    for (const auto& lr : ref) lr.validate();
    for (std::size_t i = 1; i < models.size(); ++i) {
      const auto& cur = models[i].layers;
      if (cur.size() != ref.size()) {
        throw std::invalid_argument("model " + std::to_string(i) + " has " +
                                    std::to_string(cur.size()) + " layers, expected " +
                                    std::to_string(ref.size()));
      }
      for (std::size_t l = 0; l < ref.size(); ++l) {
        cur[l].validate();
        if (cur[l].layer_name != ref[l].layer_name) {
          throw std::invalid_argument("model " + std::to_string(i) + " layer " +
                                      std::to_string(l) + " is '" + cur[l].layer_name +
                                      "', expected '" + ref[l].layer_name + "'");
        }
        if (cur[l].m() != ref[l].m() || cur[l].d() != ref[l].d() ||
            cur[l].rank() != ref[l].rank()) {
          throw std::invalid_argument("model " + std::to_string(i) + " layer '" +
                                      ref[l].layer_name + "' has inconsistent shape or rank");
        }
      }
    }
  }
};

inline LayerDelta compute_delta(std::string layer_name, const Matrix& theta_ft,
                                const Matrix& theta_pre) {
  if (theta_ft.rows() != theta_pre.rows() || theta_ft.cols() != theta_pre.cols()) {
    throw std::invalid_argument("layer '" + layer_name + "': fine-tuned and pre-trained shapes differ");
  }
  return {std::move(layer_name), theta_ft - theta_pre};
}

/// Post-training SVD truncation: A = U_r * Sigma_r, B = V_r^T.
///
/// The residual satisfies ||delta - AB||_F^2 = sum_{j>r} sigma_j^2. Singular
/// directions past the numerical rank get a zero column in A and a
/// Gram-Schmidt completed row in B.
inline LowRankDelta ptsvd_truncate(const LayerDelta& delta, Index r) {
  const Index m = delta.m();
  const Index d = delta.d();
  if (r < 1 || r > std::min(m, d)) {
    throw std::invalid_argument("layer '" + delta.layer_name + "': rank " + std::to_string(r) +
                                " outside [1, " + std::to_string(std::min(m, d)) + "]");
  }
  auto svd = canonical_svd(delta.delta);
  const Index keep = std::min(r, svd.rank);

  LowRankDelta out;
  out.layer_name = delta.layer_name;
  out.a = Matrix::Zero(m, r);
  out.a.leftCols(keep) = svd.u.leftCols(keep) * svd.singular.head(keep).asDiagonal();
  out.b = complete_orthonormal(svd.v.leftCols(keep), r).transpose();
  return out;
}

inline LayerDelta recompose(const LowRankDelta& lr) {
  lr.validate();
  return {lr.layer_name, lr.a * lr.b};
}

/// ||delta - AB||_F
inline double approximation_error(const LayerDelta& delta, const LowRankDelta& lr) {
  lr.validate();
  if (delta.m() != lr.m() || delta.d() != lr.d()) {
    throw std::invalid_argument("layer '" + delta.layer_name + "': delta and factors disagree in shape");
  }
  return (delta.delta - lr.a * lr.b).norm();
}

/// Folds the LoRA scale into A so downstream code sees a plain factor pair.
inline LowRankDelta ingest_lora(std::string layer_name, const Matrix& a_raw, const Matrix& b_raw,
                                double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("LoRA scale must be a positive finite number");
  }
  LowRankDelta out{std::move(layer_name), scale * a_raw, b_raw};
  out.validate();
  return out;
}

}  // namespace rmm
