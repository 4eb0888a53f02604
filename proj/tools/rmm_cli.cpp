// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

// rmm: compress, merge, reconstruct and account for low-rank task adapters.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rmm/rmm.hpp"

namespace fs = std::filesystem;

namespace {

/// Raised for bad flag values that CLI11 cannot check on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string describe(const rmm::Ratio& f) {
  return std::to_string(f.num) + "/" + std::to_string(f.den) + " = " + rmm::format_sig6(f.value()) + " = " +
         std::to_string(f.percent()) + "%";
}

void print_report(const rmm::StorageReport& rep) {
  std::cout << "method: " << rep.method << "\n"
            << "n: " << rep.n << "  r: " << rep.r << "  p: " << rep.p << "\n"
            << "params_retained: " << rep.params_retained << "\n"
            << "params_all_models: " << rep.params_all_models << "\n"
            << "storage_ratio: " << describe(rep.fraction()) << "\n";
}

std::vector<fs::path> resolve_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  if (inputs.size() == 1 && fs::is_directory(inputs[0])) {
    for (const auto& entry : fs::directory_iterator(inputs[0])) {
      if (entry.is_regular_file() && entry.path().extension() == ".rmmt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.assign(inputs.begin(), inputs.end());
  }
  if (files.size() < 2) throw UsageError("merging needs at least 2 adapter files, found " + std::to_string(files.size()));
  return files;
}

rmm::AdapterSet load_adapter_set(const std::vector<fs::path>& files) {
  rmm::AdapterSet set;
  for (const auto& f : files) {
    auto adapter = rmm::adapter_from_container(rmm::load_container(f));
    if (adapter.model_id.empty()) adapter.model_id = f.stem().string();
    set.models.push_back(std::move(adapter));
  }
  set.validate();
  return set;
}

std::pair<std::int64_t, std::int64_t> parse_range(const std::string& text) {
  auto dots = text.find("..");
  if (dots == std::string::npos) throw UsageError("--sweep-n expects a..b, got '" + text + "'");
  try {
    return {std::stoll(text.substr(0, dots)), std::stoll(text.substr(dots + 2))};
  } catch (const std::exception&) {
    throw UsageError("--sweep-n expects integers a..b, got '" + text + "'");
  }
}

// ---- subcommands -----------------------------------------------------------

struct CompressArgs {
  std::string pre, ft, out;
  long rank = 0;
  bool f32 = false;
};

int cmd_compress(const CompressArgs& a) {
  auto pre = rmm::weights_from_container(rmm::load_container(a.pre));
  auto ft_container = rmm::load_container(a.ft);
  auto ft = rmm::weights_from_container(ft_container);
  if (pre.size() != ft.size()) {
    throw std::invalid_argument("pre-trained file has " + std::to_string(pre.size()) + " matrices, fine-tuned has " +
                                std::to_string(ft.size()));
  }
  rmm::Adapter adapter;
  adapter.model_id = ft_container.meta("model_id").value_or(fs::path(a.ft).stem().string());
  std::cout << "layer\tfrobenius_error\trelative_error\n";
  for (std::size_t l = 0; l < ft.size(); ++l) {
    if (pre[l].first != ft[l].first) {
      throw std::invalid_argument("layer " + std::to_string(l) + " is '" + ft[l].first + "' in the fine-tuned file but '" +
                                  pre[l].first + "' in the pre-trained file");
    }
    auto delta = rmm::compute_delta(ft[l].first, ft[l].second, pre[l].second);
    auto lr = rmm::ptsvd_truncate(delta, a.rank);
    const double err = rmm::approximation_error(delta, lr);
    const double norm = delta.delta.norm();
    std::cout << delta.layer_name << '\t' << rmm::format_sig6(err) << '\t'
              << rmm::format_sig6(norm > 0 ? err / norm : 0.0) << '\n';
    adapter.layers.push_back(std::move(lr));
  }
  rmm::save_container(rmm::adapter_to_container(adapter, a.f32 ? rmm::DType::kFloat32 : rmm::DType::kFloat64), a.out);
  return 0;
}

struct MergeArgs {
  std::vector<std::string> inputs;
  std::string method = "rmm";
  std::string mode = "separate";
  std::string out;
  long p = 0;
  std::optional<double> lambda;
  double trim = 0.2;
  double drop = 0.9;
  std::optional<std::uint64_t> seed;
  bool f64 = false;
  bool unpacked = false;
  int threads = 0;
};

int cmd_merge(const MergeArgs& a) {
  const auto par = rmm::Parallelism::resolve(a.threads);
  auto set = load_adapter_set(resolve_inputs(a.inputs));
  const auto dtype = a.f64 ? rmm::DType::kFloat64 : rmm::DType::kFloat32;
  if (a.method == "rmm") {
    if (a.p < 1) throw UsageError("--p is required for --method rmm");
    auto bundle = rmm::merge_rmm(set, a.p, par);
    rmm::save_container(
        rmm::bundle_to_container(bundle, {dtype, a.unpacked ? rmm::BundleLayout::kUnpacked : rmm::BundleLayout::kPacked}),
        a.out);
    print_report(rmm::count_bundle_params(bundle));
    return 0;
  }
  rmm::MergeConfig cfg;
  cfg.method = rmm::parse_method(a.method);
  cfg.mode = rmm::parse_mode(a.mode);
  cfg.lambda = a.lambda;
  cfg.ties_trim_fraction = a.trim;
  cfg.dare_drop_rate = a.drop;
  if (cfg.method == rmm::MergeMethod::kDare) {
    if (!a.seed) throw UsageError("--method dare requires --seed");
  }
  cfg.rng_seed = a.seed.value_or(0);
  auto merged = rmm::merge_baseline(set, cfg, par);
  if (merged.all_zero()) std::cerr << "warning: merged delta is identically zero\n";
  rmm::save_container(rmm::merged_to_container(merged, a.f64 ? rmm::DType::kFloat64 : rmm::DType::kFloat32), a.out);
  print_report(rmm::count_merged_params(merged));
  return 0;
}

struct ReconstructArgs {
  std::string bundle, out;
  long task = -1;
  int threads = 0;
};

int cmd_reconstruct(const ReconstructArgs& a) {
  auto container = rmm::load_container(a.bundle);
  auto bundle = rmm::bundle_from_container(container);
  if (a.task < 0 || a.task >= bundle.n) {
    throw UsageError("--task " + std::to_string(a.task) + " outside valid range [0, " + std::to_string(bundle.n - 1) + "]");
  }
  auto dtype = container.entries().empty() ? rmm::DType::kFloat64 : container.entries().front().dtype();
  auto adapter = rmm::reconstruct_adapter(bundle, a.task, rmm::Parallelism::resolve(a.threads));
  rmm::save_container(rmm::adapter_to_container(adapter, dtype), a.out);
  return 0;
}

struct StorageArgs {
  long n = 0, r = 0, p = 0;
  std::string sweep;
};

int cmd_storage(const StorageArgs& a) {
  if (!a.sweep.empty()) {
    auto [lo, hi] = parse_range(a.sweep);
    if (lo > hi) throw UsageError("--sweep-n range is empty");
    std::vector<std::int64_t> ns;
    for (auto n = lo; n <= hi; ++n) ns.push_back(n);
    std::cout << "n,p,r,retained,all_models,ratio,percent\n";
    for (const auto& pt : rmm::scalability_sweep(a.p, a.r, ns)) {
      std::cout << pt.n << ',' << a.p << ',' << a.r << ',' << pt.ratio.num << ',' << pt.ratio.den << ','
                << rmm::format_sig6(pt.ratio.value()) << ',' << pt.ratio.percent() << '\n';
    }
    return 0;
  }
  std::cout << "rmm (n=" << a.n << ", r=" << a.r << ", p=" << a.p << "): "
            << describe(rmm::rmm_storage_fraction(a.n, a.r, a.p)) << "\n";
  std::cout << "baseline (n=" << a.n << "): " << describe(rmm::baseline_storage_fraction(a.n)) << "\n";
  return 0;
}

struct BenchArgs {
  rmm::SyntheticConfig set;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> methods{"rmm", "ta", "ties", "dare"};
  std::vector<std::int64_t> p_list{1, 2, 3};
  std::string out;
  int threads = 0;
};

int cmd_bench(BenchArgs a) {
  std::vector<rmm::BenchMethod> methods;
  bool needs_seed = false;
  for (const auto& item : a.methods) {
    auto colon = item.find(':');
    const std::string name = item.substr(0, colon);
    if (name == "rmm") {
      methods.push_back(rmm::BenchMethod::rmm());
      continue;
    }
    rmm::MergeConfig cfg;
    cfg.method = rmm::parse_method(name);
    if (colon != std::string::npos) cfg.mode = rmm::parse_mode(item.substr(colon + 1));
    cfg.rng_seed = a.seed.value_or(0);
    needs_seed = needs_seed || cfg.method == rmm::MergeMethod::kDare;
    methods.push_back(rmm::BenchMethod::one_shot(cfg));
  }
  if (needs_seed && !a.seed) throw UsageError("bench with dare requires --seed");
  a.set.seed = a.seed.value_or(0);
  auto set = rmm::generate_synthetic_set(a.set);
  auto rows = rmm::run_bench(set, methods, a.p_list, a.set.seed, rmm::Parallelism::resolve(a.threads));
  if (a.out.empty() || a.out == "-") {
    rmm::write_bench_csv(rows, std::cout);
    return 0;
  }
  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + a.out + "' for writing");
  rmm::write_bench_csv(rows, out);
  if (!out) throw std::runtime_error("write failure on '" + a.out + "'");
  return 0;
}

int cmd_inspect(const std::string& path) {
  auto c = rmm::load_container(path);
  std::cout << "metadata (" << c.metadata().size() << "):\n";
  for (const auto& [k, v] : c.metadata()) std::cout << "  " << k << " = " << v << "\n";
  std::cout << "tensors (" << c.entries().size() << "):\n";
  std::cout << "  name\tdtype\tshape\n";
  for (const auto& e : c.entries()) {
    std::cout << "  " << e.name << '\t' << rmm::dtype_name(e.dtype()) << "\t[";
    for (std::size_t i = 0; i < e.shape.size(); ++i) std::cout << (i ? ", " : "") << e.shape[i];
    std::cout << "]\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reversible merging of low-rank task adapters"};
  app.require_subcommand(1);

  CompressArgs compress;
  auto* sc = app.add_subcommand("compress", "Truncate fine-tuned minus pre-trained weights to rank-r factors");
  sc->add_option("--pre", compress.pre, "Pre-trained weights container")->required()->check(CLI::ExistingFile);
  sc->add_option("--ft", compress.ft, "Fine-tuned weights container")->required()->check(CLI::ExistingFile);
  sc->add_option("--rank", compress.rank, "Target rank r")->required();
  sc->add_option("--out", compress.out, "Output adapter container")->required();
  sc->add_flag("--f32", compress.f32, "Store factors as float32");

  MergeArgs merge;
  auto* sm = app.add_subcommand("merge", "Merge adapters with RMM or a one-shot baseline");
  sm->add_option("--inputs", merge.inputs, "Directory of *.rmmt files or an ordered list of files")
      ->required()
      ->delimiter(',');
  sm->add_option("--method", merge.method, "rmm | ta | ties | dare")
      ->check(CLI::IsMember({"rmm", "ta", "ties", "dare"}));
  sm->add_option("--p", merge.p, "Basis size for rmm");
  sm->add_option("--mode", merge.mode, "separate | combined (baselines)")
      ->check(CLI::IsMember({"separate", "combined"}));
  sm->add_option("--lambda", merge.lambda, "Scaling factor (default 1/n)");
  sm->add_option("--trim", merge.trim, "TIES trim fraction in (0, 1]");
  sm->add_option("--drop", merge.drop, "DARE drop rate in [0, 1)");
  sm->add_option("--seed", merge.seed, "DARE random seed");
  sm->add_flag("--f64", merge.f64, "Store output as float64 (default float32)");
  sm->add_flag("--unpacked", merge.unpacked, "Per-position bundle layout");
  sm->add_option("--threads", merge.threads, "Worker threads (default: $RMM_THREADS or all cores)");
  sm->add_option("--out", merge.out, "Output container")->required();

  ReconstructArgs recon;
  auto* sr = app.add_subcommand("reconstruct", "Rebuild one task's adapter from a bundle");
  sr->add_option("--bundle", recon.bundle, "Bundle container")->required()->check(CLI::ExistingFile);
  sr->add_option("--task", recon.task, "Task index")->required();
  sr->add_option("--out", recon.out, "Output adapter container")->required();
  sr->add_option("--threads", recon.threads, "Worker threads");

  StorageArgs storage;
  auto* ss = app.add_subcommand("storage", "Storage ratios of RMM and one-shot baselines");
  ss->add_option("--n", storage.n, "Number of models");
  ss->add_option("--r", storage.r, "Adapter rank")->required();
  ss->add_option("--p", storage.p, "Basis size")->required();
  ss->add_option("--sweep-n", storage.sweep, "Emit a CSV sweep over n in a..b");

  BenchArgs bench;
  auto* sb = app.add_subcommand("bench", "Synthetic reconstruction benchmark, CSV output");
  sb->add_option("--n", bench.set.n, "Number of models");
  sb->add_option("--layers", bench.set.layers, "Layer count");
  sb->add_option("--m", bench.set.m, "Rows per layer");
  sb->add_option("--d", bench.set.d, "Columns per layer");
  sb->add_option("--r", bench.set.r, "Adapter rank");
  sb->add_option("--latent-p", bench.set.latent_p, "Planted basis size");
  sb->add_option("--noise", bench.set.noise, "Gaussian noise scale");
  sb->add_option("--seed", bench.seed, "Seed for the synthetic set and DARE");
  sb->add_option("--methods", bench.methods, "Methods, e.g. rmm,ta,ties:combined,dare")->delimiter(',');
  sb->add_option("--p-list", bench.p_list, "RMM basis sizes")->delimiter(',');
  sb->add_option("--out", bench.out, "Output CSV (default stdout)");
  sb->add_option("--threads", bench.threads, "Worker threads");

  std::string inspect_path;
  auto* si = app.add_subcommand("inspect", "List tensors and metadata of a container");
  si->add_option("--file", inspect_path, "Container file")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sc) return cmd_compress(compress);
    if (*sm) return cmd_merge(merge);
    if (*sr) return cmd_reconstruct(recon);
    if (*ss) {
      if (storage.sweep.empty() && storage.n <= 0) throw UsageError("--n is required unless --sweep-n is given");
      return cmd_storage(storage);
    }
    if (*sb) return cmd_bench(bench);
    if (*si) return cmd_inspect(inspect_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
