// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// One-shot merging baselines: task arithmetic, TIES and DARE, applied either
// to the A and B factors independently ("separate") or to the recomposed full
// deltas ("combined").

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rmm/container.hpp"
#include "rmm/io.hpp"
#include "rmm/linalg.hpp"
#include "rmm/lowrank.hpp"
#include "rmm/parallel.hpp"

namespace rmm {

enum class MergeMethod { kTaskArithmetic, kTies, kDare };
enum class MergeMode { kSeparate, kCombined };

inline std::string_view method_name(MergeMethod m) {
  switch (m) {
    case MergeMethod::kTaskArithmetic: return "ta";
    case MergeMethod::kTies: return "ties";
    case MergeMethod::kDare: return "dare";
  }
  return "?";
}

inline std::string_view mode_name(MergeMode m) {
  return m == MergeMode::kSeparate ? "separate" : "combined";
}

inline MergeMethod parse_method(std::string_view s) {
  if (s == "ta" || s == "task_arithmetic") return MergeMethod::kTaskArithmetic;
  if (s == "ties") return MergeMethod::kTies;
  if (s == "dare") return MergeMethod::kDare;
  throw std::invalid_argument("unknown merge method '" + std::string(s) + "'");
}

inline MergeMode parse_mode(std::string_view s) {
  if (s == "separate") return MergeMode::kSeparate;
  if (s == "combined") return MergeMode::kCombined;
  throw std::invalid_argument("unknown merge mode '" + std::string(s) + "'");
}

struct MergeConfig {
  MergeMethod method = MergeMethod::kTaskArithmetic;
  MergeMode mode = MergeMode::kSeparate;
  std::optional<double> lambda;  // unset means 1/n
  double ties_trim_fraction = 0.2;
  double dare_drop_rate = 0.9;
  std::uint64_t rng_seed = 0;

  double resolved_lambda(std::size_t n) const { return lambda.value_or(1.0 / static_cast<double>(n)); }

  void validate() const {
    if (lambda && !std::isfinite(*lambda)) throw std::invalid_argument("lambda must be finite");
    if (!(ties_trim_fraction > 0.0 && ties_trim_fraction <= 1.0)) {
      throw std::invalid_argument("TIES trim fraction must lie in (0, 1]");
    }
    if (!(dare_drop_rate >= 0.0 && dare_drop_rate < 1.0)) {
      throw std::invalid_argument("DARE drop rate must lie in [0, 1)");
    }
  }
};

namespace detail {

inline void check_same_shape(std::span<const Matrix> inputs) {
  if (inputs.empty()) throw std::invalid_argument("merge needs at least one input");
  for (const auto& m : inputs) {
    if (m.rows() != inputs[0].rows() || m.cols() != inputs[0].cols()) {
      throw std::invalid_argument("merge inputs differ in shape");
    }
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Uniform in [0, 1) from a stateless hash of the key.
inline double counter_uniform(std::uint64_t seed, std::uint64_t model, std::uint64_t stream,
                              std::uint64_t row, std::uint64_t col) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ model);
  h = detail::splitmix64(h ^ stream);
  h = detail::splitmix64(h ^ row);
  h = detail::splitmix64(h ^ col);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// lambda * sum_i inputs_i
inline Matrix merge_task_arithmetic(std::span<const Matrix> inputs, double lambda) {
  detail::check_same_shape(inputs);
  Matrix sum = Matrix::Zero(inputs[0].rows(), inputs[0].cols());
  for (const auto& m : inputs) sum += m;
  return lambda * sum;
}

/// Number of entries TIES keeps out of `total` at trim fraction `f`.
/// The small slack keeps products like 0.3 * 10 from rounding up to 4.
inline std::size_t ties_keep_count(double f, std::size_t total) {
  const double raw = f * static_cast<double>(total);
  return std::min(total, static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw))));
}

/// Keeps entries whose magnitude reaches the keep-count-th largest magnitude;
/// ties at the threshold are all kept.
inline Matrix ties_trim(const Matrix& m, double trim_fraction) {
  const auto total = static_cast<std::size_t>(m.size());
  if (total == 0) return m;
  const std::size_t keep = ties_keep_count(trim_fraction, total);
  if (keep == 0) return Matrix::Zero(m.rows(), m.cols());
  std::vector<double> mags(total);
  for (std::size_t k = 0; k < total; ++k) mags[k] = std::abs(m.data()[k]);
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(keep - 1), mags.end(),
                   std::greater<>());
  const double threshold = mags[keep - 1];
  Matrix out = m;
  for (Index k = 0; k < out.size(); ++k) {
    if (std::abs(out.data()[k]) < threshold) out.data()[k] = 0.0;
  }
  return out;
}

/// TIES: trim each input, elect a sign per coordinate by retained mass (positive
/// wins an exact tie), then average the retained entries carrying that sign.
/// The average is scaled by lambda * n, so lambda = 1/n gives the plain mean.
inline Matrix merge_ties(std::span<const Matrix> inputs, double trim_fraction, double lambda) {
  detail::check_same_shape(inputs);
  if (!(trim_fraction > 0.0 && trim_fraction <= 1.0)) {
    throw std::invalid_argument("TIES trim fraction must lie in (0, 1]");
  }
  std::vector<Matrix> trimmed;
  trimmed.reserve(inputs.size());
  for (const auto& m : inputs) trimmed.push_back(ties_trim(m, trim_fraction));

  const Index size = inputs[0].size();
  Matrix out = Matrix::Zero(inputs[0].rows(), inputs[0].cols());
  const double scale = lambda * static_cast<double>(inputs.size());
  for (Index k = 0; k < size; ++k) {
    double pos_mass = 0.0;
    double neg_mass = 0.0;
    for (const auto& t : trimmed) {
      const double v = t.data()[k];
      if (v > 0.0) pos_mass += v;
      if (v < 0.0) neg_mass -= v;
    }
    const bool positive = pos_mass >= neg_mass;
    double sum = 0.0;
    int count = 0;
    for (const auto& t : trimmed) {
      const double v = t.data()[k];
      if ((positive && v > 0.0) || (!positive && v < 0.0)) {
        sum += v;
        ++count;
      }
    }
    if (count > 0) out.data()[k] = scale * sum / count;
  }
  return out;
}

/// DARE: drop each entry with probability drop_rate, rescale survivors by
/// 1/(1 - drop_rate), then task arithmetic. Randomness is keyed by
/// (seed, model, stream, row, col), so the result ignores evaluation order.
inline Matrix merge_dare(std::span<const Matrix> inputs, double drop_rate, std::uint64_t seed, double lambda,
                         std::uint64_t stream = 0) {
  detail::check_same_shape(inputs);
  if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw std::invalid_argument("DARE drop rate must lie in [0, 1)");
  if (drop_rate == 0.0) return merge_task_arithmetic(inputs, lambda);
  const double rescale = 1.0 / (1.0 - drop_rate);
  std::vector<Matrix> sparse;
  sparse.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Matrix m = inputs[i];
    for (Index row = 0; row < m.rows(); ++row) {
      for (Index col = 0; col < m.cols(); ++col) {
        const double u = counter_uniform(seed, i, stream, static_cast<std::uint64_t>(row),
                                         static_cast<std::uint64_t>(col));
        m(row, col) = u < drop_rate ? 0.0 : m(row, col) * rescale;
      }
    }
    sparse.push_back(std::move(m));
  }
  return merge_task_arithmetic(sparse, lambda);
}

/// Merges matrices with the method in `cfg`. `stream` separates DARE draws
/// of different tensors.
inline Matrix merge_matrices(std::span<const Matrix> inputs, const MergeConfig& cfg, std::size_t n,
                             std::uint64_t stream) {
  const double lambda = cfg.resolved_lambda(n);
  switch (cfg.method) {
    case MergeMethod::kTaskArithmetic: return merge_task_arithmetic(inputs, lambda);
    case MergeMethod::kTies: return merge_ties(inputs, cfg.ties_trim_fraction, lambda);
    case MergeMethod::kDare: return merge_dare(inputs, cfg.dare_drop_rate, cfg.rng_seed, lambda, stream);
  }
  throw std::invalid_argument("unknown merge method");
}

struct MergedLayer {
  std::string name;
  Index m = 0;
  Index d = 0;
  Index rank = 0;  // rank of the source adapters
  Matrix a;      // separate mode
  Matrix b;      // separate mode
  Matrix delta;  // combined mode
};

/// Output of a one-shot merge: factor pairs (separate) or full deltas (combined).
struct MergedModel {
  MergeConfig config;
  std::size_t n = 0;
  std::vector<MergedLayer> layers;

  Matrix layer_delta(std::size_t l) const {
    const auto& layer = layers.at(l);
    return config.mode == MergeMode::kSeparate ? Matrix(layer.a * layer.b) : layer.delta;
  }

  /// Scalars held by the merged model.
  std::uint64_t stored_scalars() const {
    std::uint64_t total = 0;
    for (const auto& l : layers) {
      total += config.mode == MergeMode::kSeparate ? static_cast<std::uint64_t>(l.a.size() + l.b.size())
                                                   : static_cast<std::uint64_t>(l.delta.size());
    }
    return total;
  }

  bool all_zero() const {
    for (const auto& l : layers) {
      if (config.mode == MergeMode::kSeparate ? !(l.a * l.b).isZero(0.0) : !l.delta.isZero(0.0)) return false;
    }
    return true;
  }
};

namespace detail {

inline std::uint64_t dare_stream(std::size_t layer, int part) { return static_cast<std::uint64_t>(layer) * 3 + part; }

}  // namespace detail

/// Per layer: M({A_i}) and M({B_i}) independently.
inline MergedModel merge_separate(const AdapterSet& set, const MergeConfig& cfg, Parallelism par = {}) {
  set.validate();
  cfg.validate();
  if (cfg.mode != MergeMode::kSeparate) throw std::invalid_argument("merge_separate requires mode 'separate'");
  MergedModel out{cfg, set.n(), std::vector<MergedLayer>(set.layer_count())};
  parallel_for(set.layer_count(), par, [&](std::size_t l) {
    std::vector<Matrix> as, bs;
    for (std::size_t i = 0; i < set.n(); ++i) {
      as.push_back(set.layer(i, l).a);
      bs.push_back(set.layer(i, l).b);
    }
    auto& layer = out.layers[l];
    const auto& ref = set.layer(0, l);
    layer.name = ref.layer_name;
    layer.m = ref.m();
    layer.d = ref.d();
    layer.rank = ref.rank();
    layer.a = merge_matrices(as, cfg, set.n(), detail::dare_stream(l, 0));
    layer.b = merge_matrices(bs, cfg, set.n(), detail::dare_stream(l, 1));
  });
  return out;
}

/// Per layer: M({A_i B_i}) on the recomposed full deltas.
inline MergedModel merge_combined(const AdapterSet& set, const MergeConfig& cfg, Parallelism par = {}) {
  set.validate();
  cfg.validate();
  if (cfg.mode != MergeMode::kCombined) throw std::invalid_argument("merge_combined requires mode 'combined'");
  MergedModel out{cfg, set.n(), std::vector<MergedLayer>(set.layer_count())};
  parallel_for(set.layer_count(), par, [&](std::size_t l) {
    std::vector<Matrix> deltas;
    for (std::size_t i = 0; i < set.n(); ++i) deltas.push_back(recompose(set.layer(i, l)).delta);
    auto& layer = out.layers[l];
    const auto& ref = set.layer(0, l);
    layer.name = ref.layer_name;
    layer.m = ref.m();
    layer.d = ref.d();
    layer.rank = ref.rank();
    layer.delta = merge_matrices(deltas, cfg, set.n(), detail::dare_stream(l, 2));
  });
  return out;
}

inline MergedModel merge_baseline(const AdapterSet& set, const MergeConfig& cfg, Parallelism par = {}) {
  return cfg.mode == MergeMode::kSeparate ? merge_separate(set, cfg, par) : merge_combined(set, cfg, par);
}

inline std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline TensorContainer merged_to_container(const MergedModel& model, DType dtype = DType::kFloat64) {
  TensorContainer c;
  c.set_meta("format", "merged-model");
  c.set_meta("method", std::string(method_name(model.config.method)));
  c.set_meta("mode", std::string(mode_name(model.config.mode)));
  c.set_meta("n", std::to_string(model.n));
  c.set_meta("lambda", format_real(model.config.resolved_lambda(model.n)));
  c.set_meta("ties_trim_fraction", format_real(model.config.ties_trim_fraction));
  c.set_meta("dare_drop_rate", format_real(model.config.dare_drop_rate));
  c.set_meta("seed", std::to_string(model.config.rng_seed));
  for (const auto& l : model.layers) {
    if (model.config.mode == MergeMode::kSeparate) {
      c.add(matrix_entry(l.name + ".A", l.a, dtype));
      c.add(matrix_entry(l.name + ".B", l.b, dtype));
    } else {
      c.add(matrix_entry(l.name + ".delta", l.delta, dtype));
    }
  }
  return c;
}

}  // namespace rmm
