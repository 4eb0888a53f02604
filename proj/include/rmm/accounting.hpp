// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rmm/baseline.hpp"
#include "rmm/core.hpp"

namespace rmm {

/// Non-negative rational kept unreduced, so "88/128" prints as counted.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  /// Integer percent, rounding half up (12.5% -> 13%). Exact integer arithmetic.
  std::uint64_t percent() const { return (200 * num + den) / (2 * den); }

  bool same_value(const Ratio& o) const { return num * o.den == o.num * den; }
};

/// Retained over all-models storage: (p(r+n) + r) / (r n).
inline Ratio rmm_storage_fraction(std::int64_t n, std::int64_t r, std::int64_t p) {
  if (n < 1 || r < 1 || p < 1 || p > std::min(n, r)) {
    throw std::invalid_argument("storage ratio needs positive n, r, p with p <= min(n, r); got n=" +
                                std::to_string(n) + " r=" + std::to_string(r) + " p=" + std::to_string(p));
  }
  const auto un = static_cast<std::uint64_t>(n);
  const auto ur = static_cast<std::uint64_t>(r);
  const auto up = static_cast<std::uint64_t>(p);
  return {up * (ur + un) + ur, ur * un};
}

inline double rmm_storage_ratio(std::int64_t n, std::int64_t r, std::int64_t p) {
  return rmm_storage_fraction(n, r, p).value();
}

/// A single merged adapter out of n: 1/n.
inline Ratio baseline_storage_fraction(std::int64_t n) {
  if (n < 1) throw std::invalid_argument("n must be positive");
  return {1, static_cast<std::uint64_t>(n)};
}

inline double baseline_storage_ratio(std::int64_t n) { return baseline_storage_fraction(n).value(); }

struct StorageReport {
  std::string method;
  std::uint64_t params_retained = 0;
  std::uint64_t params_all_models = 0;
  std::int64_t n = 0;
  std::int64_t r = 0;
  std::int64_t p = 0;  // 0 for one-shot baselines
  std::vector<LayerShape> layers;

  Ratio fraction() const { return {params_retained, params_all_models}; }
  double ratio() const { return fraction().value(); }
};

/// Scalars in the bundle's W, C and mu against storing all n adapters.
inline StorageReport count_bundle_params(const RmmBundle& bundle) {
  StorageReport rep;
  rep.method = "rmm";
  rep.n = bundle.n;
  rep.r = bundle.r;
  rep.p = bundle.p;
  rep.layers = bundle.layers;
  for (const auto& pb : bundle.positions) {
    rep.params_retained += static_cast<std::uint64_t>(pb.w.size() + pb.c.size() + pb.mu.size());
  }
  for (const auto& l : bundle.layers) {
    rep.params_all_models += static_cast<std::uint64_t>((l.m + l.d) * bundle.r * bundle.n);
  }
  return rep;
}

/// Scalars in a one-shot merge output: r(m+d) per layer separate, m*d combined.
inline StorageReport count_merged_params(const MergedModel& model) {
  StorageReport rep;
  rep.method = std::string(method_name(model.config.method)) + "/" + std::string(mode_name(model.config.mode));
  rep.n = static_cast<std::int64_t>(model.n);
  rep.params_retained = model.stored_scalars();
  for (const auto& l : model.layers) {
    rep.layers.push_back({l.name, l.m, l.d});
    rep.r = l.rank;
    rep.params_all_models += static_cast<std::uint64_t>((l.m + l.d) * l.rank) * model.n;
  }
  return rep;
}

struct SweepPoint {
  std::int64_t n;
  Ratio ratio;
};

/// RMM storage ratio for each n at fixed p and r. Equals p/n + p/r + 1/n.
inline std::vector<SweepPoint> scalability_sweep(std::int64_t p, std::int64_t r,
                                                 const std::vector<std::int64_t>& n_values) {
  std::vector<SweepPoint> out;
  out.reserve(n_values.size());
  for (auto n : n_values) {
    if (n < p) {
      throw std::invalid_argument("sweep value n=" + std::to_string(n) + " is below p=" + std::to_string(p));
    }
    out.push_back({n, rmm_storage_fraction(n, r, p)});
  }
  return out;
}

}  // namespace rmm
