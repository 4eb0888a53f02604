// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace rmm {

/// Degree of parallelism. Results never depend on it.
struct Parallelism {
  unsigned threads = 1;

  static Parallelism hardware() {
    return {std::max(1u, std::thread::hardware_concurrency())};
  }

  /// `requested` if positive, else $RMM_THREADS, else all cores.
  static Parallelism resolve(int requested) {
    if (requested > 0) return {static_cast<unsigned>(requested)};
    if (const char* env = std::getenv("RMM_THREADS")) {
      try {
        int v = std::stoi(env);
        if (v > 0) return {static_cast<unsigned>(v)};
      } catch (const std::exception&) {
      }
    }
    return hardware();
  }
};

/// Calls body(i) for i in [0, count). Each index must write only its own output slot.
/// If several indices throw, the exception of the lowest index is rethrown.
template <typename Body>
void parallel_for(std::size_t count, Parallelism par, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(std::max(1u, par.threads), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, count);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < count; i += workers) {
          try {
            body(i);
          } catch (...) {
            errors[w] = std::current_exception();
            error_index[w] = i;
            return;
          }
        }
      });
    }
  }
  std::size_t first = workers;
  for (std::size_t w = 0; w < workers; ++w) {
    if (errors[w] && (first == workers || error_index[w] < error_index[first])) first = w;
  }
  if (first != workers) std::rethrow_exception(errors[first]);
}

}  // namespace rmm
