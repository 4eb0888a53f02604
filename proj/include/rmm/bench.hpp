// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic adapter sets with a planted low-dimensional structure and a
// harness comparing RMM reconstruction against one-shot baselines.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rmm/accounting.hpp"
#include "rmm/baseline.hpp"
#include "rmm/core.hpp"
#include "rmm/lowrank.hpp"
#include "rmm/parallel.hpp"

namespace rmm {

struct SyntheticConfig {
  std::int64_t n = 8;
  std::int64_t layers = 2;
  std::int64_t m = 12;
  std::int64_t d = 12;
  std::int64_t r = 8;
  std::int64_t latent_p = 2;
  double noise = 0.0;
  std::uint64_t seed = 0;
  double coefficient_scale = 1.0;
  double mean_scale = 1.0;
};

/// Every task vector is mu + sum_{j < latent_p} c_ij w_j + noise * N(0, 1),
/// with a fresh orthonormal W, coefficients and mean per position.
inline AdapterSet generate_synthetic_set(const SyntheticConfig& cfg) {
  if (cfg.n < 2 || cfg.layers < 1 || cfg.m < 1 || cfg.d < 1 || cfg.r < 1) {
    throw std::invalid_argument("synthetic set needs n >= 2 and positive layers, m, d, r");
  }
  if (cfg.r > std::min(cfg.m, cfg.d)) throw std::invalid_argument("rank r must not exceed min(m, d)");
  if (cfg.latent_p < 0 || cfg.latent_p > std::min(cfg.n - 1, cfg.r)) {
    throw std::invalid_argument("latent_p must lie in [0, min(n - 1, r)]");
  }
  if (!(cfg.noise >= 0.0) || !std::isfinite(cfg.noise)) throw std::invalid_argument("noise must be >= 0");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto gaussian = [&](Index rows, Index cols) {
    Matrix g(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) g(i, j) = gauss(rng);
    }
    return g;
  };

  const auto n = static_cast<Index>(cfg.n);
  const auto r = static_cast<Index>(cfg.r);
  const auto lp = static_cast<Index>(cfg.latent_p);
  auto planted = [&]() -> Matrix {  // n x r task vectors of one position
    Vector mu = cfg.mean_scale * gaussian(r, 1).col(0);
    Matrix x = Matrix::Zero(n, r);
    x.rowwise() += mu.transpose();
    if (lp > 0) {
      Eigen::HouseholderQR<Matrix> qr(gaussian(r, lp));
      Matrix w = qr.householderQ() * Matrix::Identity(r, lp);
      Matrix c = cfg.coefficient_scale * gaussian(n, lp);
      x += c * w.transpose();
    }
    if (cfg.noise > 0.0) x += cfg.noise * gaussian(n, r);
    return x;
  };

  AdapterSet set;
  set.models.resize(static_cast<std::size_t>(cfg.n));
  for (std::size_t i = 0; i < set.models.size(); ++i) set.models[i].model_id = "task" + std::to_string(i);
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string name = "layer" + std::to_string(l);
    for (auto& model : set.models) {
      model.layers.push_back({name, Matrix(cfg.m, r), Matrix(r, cfg.d)});
    }
    for (Index row = 0; row < cfg.m; ++row) {
      Matrix x = planted();
      for (Index i = 0; i < n; ++i) set.models[static_cast<std::size_t>(i)].layers.back().a.row(row) = x.row(i);
    }
    for (Index col = 0; col < cfg.d; ++col) {
      Matrix x = planted();
      for (Index i = 0; i < n; ++i) {
        set.models[static_cast<std::size_t>(i)].layers.back().b.col(col) = x.row(i).transpose();
      }
    }
  }
  return set;
}

/// One bench cell: RMM when `baseline` is empty, otherwise a one-shot method.
struct BenchMethod {
  std::optional<MergeConfig> baseline;

  static BenchMethod rmm() { return {}; }
  static BenchMethod one_shot(MergeConfig cfg) { return {cfg}; }
};

struct BenchRow {
  std::string method;
  std::string mode;
  std::int64_t n = 0;
  std::int64_t r = 0;
  std::int64_t p = 0;  // 0 for one-shot baselines
  std::uint64_t seed = 0;
  double mean_rel_error = 0.0;
  double storage_ratio = 0.0;

  bool operator==(const BenchRow&) const = default;
};

/// ||Delta - Delta_hat||_F / ||Delta||_F over all layers; the absolute error
/// when Delta is zero.
inline double relative_delta_error(const std::vector<Matrix>& truth, const std::vector<Matrix>& approx) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t l = 0; l < truth.size(); ++l) {
    num += (truth[l] - approx[l]).squaredNorm();
    den += truth[l].squaredNorm();
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline std::vector<Matrix> adapter_deltas(const Adapter& a) {
  std::vector<Matrix> out;
  out.reserve(a.layers.size());
  for (const auto& lr : a.layers) out.push_back(lr.a * lr.b);
  return out;
}

/// Rows follow `methods` order; an RMM entry expands to one row per p.
inline std::vector<BenchRow> run_bench(const AdapterSet& set, const std::vector<BenchMethod>& methods,
                                       const std::vector<std::int64_t>& p_values, std::uint64_t seed,
                                       Parallelism par = {}) {
  set.validate();
  struct Cell {
    const BenchMethod* method;
    std::int64_t p;
  };
  std::vector<Cell> cells;
  for (const auto& m : methods) {
    if (m.baseline) {
      m.baseline->validate();
      cells.push_back({&m, 0});
    } else {
      for (auto p : p_values) cells.push_back({&m, p});
    }
  }

  std::vector<std::vector<Matrix>> truth;
  for (const auto& model : set.models) truth.push_back(adapter_deltas(model));
  const auto n = static_cast<std::int64_t>(set.n());
  const std::int64_t r = set.layer(0, 0).rank();

  std::vector<BenchRow> rows(cells.size());
  // Cells run sequentially; each merge parallelizes internally.
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto& cell = cells[k];
    BenchRow row;
    row.n = n;
    row.r = r;
    row.p = cell.p;
    row.seed = seed;
    double total = 0.0;
    if (!cell.method->baseline) {
      row.method = "rmm";
      row.mode = "-";
      auto bundle = merge_rmm(set, cell.p, par);
      for (std::size_t i = 0; i < set.n(); ++i) {
        total += relative_delta_error(truth[i], adapter_deltas(reconstruct_adapter(bundle, static_cast<Index>(i), par)));
      }
      row.storage_ratio = count_bundle_params(bundle).ratio();
    } else {
      const auto& cfg = *cell.method->baseline;
      row.method = std::string(method_name(cfg.method));
      row.mode = std::string(mode_name(cfg.mode));
      auto merged = merge_baseline(set, cfg, par);
      std::vector<Matrix> merged_deltas;
      for (std::size_t l = 0; l < merged.layers.size(); ++l) merged_deltas.push_back(merged.layer_delta(l));
      for (std::size_t i = 0; i < set.n(); ++i) total += relative_delta_error(truth[i], merged_deltas);
      row.storage_ratio = count_merged_params(merged).ratio();
    }
    row.mean_rel_error = total / static_cast<double>(set.n());
    rows[k] = std::move(row);
  }
  return rows;
}

inline constexpr const char* kBenchCsvHeader = "method,mode,n,r,p,seed,mean_rel_error,storage_ratio";

inline std::string format_sig6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& out) {
  out << kBenchCsvHeader << '\n';
  for (const auto& row : rows) {
    out << row.method << ',' << row.mode << ',' << row.n << ',' << row.r << ',' << row.p << ',' << row.seed
        << ',' << format_sig6(row.mean_rel_error) << ',' << format_sig6(row.storage_ratio) << '\n';
  }
}

}  // namespace rmm
