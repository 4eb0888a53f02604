// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

// Merge eight synthetic adapters into one bundle, write it to disk, read it
// back and rebuild every task. Compares against task arithmetic.
//
//   ./merge_roundtrip [p] [bundle-path]

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "rmm/rmm.hpp"

int main(int argc, char** argv) {
  const long p = argc > 1 ? std::strtol(argv[1], nullptr, 10) : 2;
  const std::filesystem::path path =
      argc > 2 ? std::filesystem::path(argv[2]) : std::filesystem::temp_directory_path() / "merge_roundtrip.rmmt";

  rmm::SyntheticConfig cfg;
  cfg.n = 8;
  cfg.m = cfg.d = 32;
  cfg.r = 16;
  cfg.latent_p = 2;
  cfg.noise = 0.05;
  cfg.seed = 1;
  const auto set = rmm::generate_synthetic_set(cfg);

  const auto par = rmm::Parallelism::resolve(0);
  const auto bundle = rmm::merge_rmm(set, p, par);
  const auto bytes = rmm::save_container(rmm::bundle_to_container(bundle, {rmm::DType::kFloat64}), path);
  const auto loaded = rmm::bundle_from_container(rmm::load_container(path));

  rmm::MergeConfig ta;
  const auto merged = rmm::merge_baseline(set, ta, par);
  std::vector<rmm::Matrix> ta_deltas;
  for (std::size_t l = 0; l < merged.layers.size(); ++l) ta_deltas.push_back(merged.layer_delta(l));

  std::printf("bundle: %s (%zu bytes)\n", path.string().c_str(), bytes);
  std::printf("task\trmm_rel_error\tta_rel_error\n");
  for (std::size_t i = 0; i < set.n(); ++i) {
    const auto truth = rmm::adapter_deltas(set.models[i]);
    const auto rec = rmm::reconstruct_adapter(loaded, static_cast<rmm::Index>(i), par);
    std::printf("%s\t%.3e\t%.3e\n", set.models[i].model_id.c_str(),
                rmm::relative_delta_error(truth, rmm::adapter_deltas(rec)), rmm::relative_delta_error(truth, ta_deltas));
  }

  const auto rep = rmm::count_bundle_params(bundle);
  std::printf("storage: %llu/%llu = %llu%% of all adapters (task arithmetic: %llu%%)\n",
              static_cast<unsigned long long>(rep.params_retained),
              static_cast<unsigned long long>(rep.params_all_models),
              static_cast<unsigned long long>(rep.fraction().percent()),
              static_cast<unsigned long long>(rmm::baseline_storage_fraction(cfg.n).percent()));
  return 0;
}
