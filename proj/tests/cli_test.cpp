// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rmm/rmm.hpp"

namespace fs = std::filesystem;

namespace rmm {
namespace {

struct RunResult {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("rmm_cli_") + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args) {
    const auto err_path = dir_ / "stderr.txt";
    const std::string cmd = std::string("'") + RMM_CLI_PATH + "' " + args + " 2>'" + err_path.string() + "'";
    RunResult res;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return res;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) res.out.append(buf, got);
    const int raw = ::pclose(pipe);
    res.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    res.err = slurp(err_path);
    return res;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Writes each model of the set as <dir>/adapters/task<i>.rmmt.
  std::string write_set(const AdapterSet& set) {
    const auto sub = dir_ / "adapters";
    fs::create_directories(sub);
    for (const auto& model : set.models) save_container(adapter_to_container(model), sub / (model.model_id + ".rmmt"));
    return sub.string();
  }

  fs::path dir_;
};

AdapterSet planted_set(std::int64_t n = 8, std::int64_t r = 16) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.layers = 2;
  cfg.m = 16;
  cfg.d = 16;
  cfg.r = r;
  cfg.latent_p = 2;
  cfg.seed = 21;
  return generate_synthetic_set(cfg);
}

TEST_F(CliTest, CompressWritesAdapterAndErrorTable) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  TensorContainer pre, ft;
  for (const char* name : {"blk0.q", "blk0.v"}) {
    Matrix base = Matrix::NullaryExpr(6, 5, [&] { return g(rng); });
    Matrix delta = Matrix::NullaryExpr(6, 2, [&] { return g(rng); }) * Matrix::NullaryExpr(2, 5, [&] { return g(rng); });
    pre.add(matrix_entry(name, base, DType::kFloat64));
    ft.add(matrix_entry(name, base + delta, DType::kFloat64));
  }
  save_container(pre, path("pre.rmmt"));
  save_container(ft, path("ft.rmmt"));
  auto res = run("compress --pre " + path("pre.rmmt") + " --ft " + path("ft.rmmt") + " --rank 2 --out " + path("a.rmmt"));
  ASSERT_EQ(res.status, 0) << res.err;
  EXPECT_EQ(res.out.rfind("layer\tfrobenius_error\trelative_error\n", 0), 0u);
  EXPECT_NE(res.out.find("blk0.v\t"), std::string::npos);
  auto adapter = adapter_from_container(load_container(path("a.rmmt")));
  ASSERT_EQ(adapter.layers.size(), 2u);
  EXPECT_EQ(adapter.layers[0].rank(), 2);
  Matrix truth = entry_matrix(ft.get("blk0.q")) - entry_matrix(pre.get("blk0.q"));
  EXPECT_LT((adapter.layers[0].a * adapter.layers[0].b - truth).norm(), 1e-9 * truth.norm());

  // Equal weights: A is zero, so the product and every error are exactly 0.
  auto same = run("compress --pre " + path("pre.rmmt") + " --ft " + path("pre.rmmt") + " --rank 2 --out " + path("z.rmmt"));
  ASSERT_EQ(same.status, 0) << same.err;
  EXPECT_NE(same.out.find("blk0.q\t0\t0\n"), std::string::npos) << same.out;
  auto zero = adapter_from_container(load_container(path("z.rmmt")));
  EXPECT_TRUE(zero.layers[1].a.isZero(0.0));
  EXPECT_TRUE((zero.layers[1].a * zero.layers[1].b).isZero(0.0));

  EXPECT_NE(run("compress --pre " + path("pre.rmmt") + " --ft " + path("ft.rmmt") + " --rank 9 --out " + path("b.rmmt"))
                .status,
            0);
}

TEST_F(CliTest, MergeReportsStorageAndReconstructsExactly) {
  auto set = planted_set();
  auto inputs = write_set(set);
  auto res = run("merge --inputs " + inputs + " --method rmm --p 2 --f64 --out " + path("bundle.rmmt"));
  ASSERT_EQ(res.status, 0) << res.err;
  EXPECT_NE(res.out.find("storage_ratio: 4096/8192 = 0.5 = 50%"), std::string::npos) << res.out;

  for (int task : {0, 5}) {
    auto rec = run("reconstruct --bundle " + path("bundle.rmmt") + " --task " + std::to_string(task) + " --out " +
                   path("rec.rmmt"));
    ASSERT_EQ(rec.status, 0) << rec.err;
    auto adapter = adapter_from_container(load_container(path("rec.rmmt")));
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& orig = set.layer(static_cast<std::size_t>(task), l);
      EXPECT_LT((adapter.layers[l].a - orig.a).cwiseAbs().maxCoeff(), 1e-8);
      EXPECT_LT((adapter.layers[l].b - orig.b).cwiseAbs().maxCoeff(), 1e-8);
    }
  }

  auto bad = run("reconstruct --bundle " + path("bundle.rmmt") + " --task 8 --out " + path("x.rmmt"));
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.err.find("[0, 7]"), std::string::npos) << bad.err;
  EXPECT_FALSE(fs::exists(path("x.rmmt")));
}

TEST_F(CliTest, InputListOrderIsHonoured) {
  auto set = planted_set(3, 4);
  auto dir = write_set(set);
  auto res = run("merge --inputs " + dir + "/task2.rmmt," + dir + "/task0.rmmt," + dir +
                 "/task1.rmmt --method rmm --p 2 --f64 --out " + path("b.rmmt"));
  ASSERT_EQ(res.status, 0) << res.err;
  auto bundle = bundle_from_container(load_container(path("b.rmmt")));
  auto first = reconstruct_adapter(bundle, 0);
  EXPECT_LT((first.layers[0].a - set.layer(2, 0).a).cwiseAbs().maxCoeff(), 1e-8);
}

TEST_F(CliTest, OutputsAreByteIdenticalAcrossThreadCounts) {
  auto inputs = write_set(planted_set());
  for (const std::string method : {"rmm --p 3", "ties", "dare --seed 4"}) {
    ASSERT_EQ(run("merge --inputs " + inputs + " --method " + method + " --threads 1 --out " + path("t1.rmmt")).status, 0);
    ASSERT_EQ(run("merge --inputs " + inputs + " --method " + method + " --threads 3 --out " + path("t3.rmmt")).status, 0);
    EXPECT_EQ(slurp(path("t1.rmmt")), slurp(path("t3.rmmt"))) << method;
  }
  auto b1 = run("bench --n 4 --r 4 --m 6 --d 6 --seed 2 --threads 1");
  auto b3 = run("bench --n 4 --r 4 --m 6 --d 6 --seed 2 --threads 3");
  ASSERT_EQ(b1.status, 0) << b1.err;
  EXPECT_EQ(b1.out, b3.out);
}

TEST_F(CliTest, ZeroMergeWarns) {
  Matrix a = Matrix::Constant(4, 2, 1.0), b = Matrix::Constant(2, 3, 2.0);
  AdapterSet set{{{"task0", {{"l", a, b}}}, {"task1", {{"l", -a, b}}}}};
  auto inputs = write_set(set);
  auto res = run("merge --inputs " + inputs + " --method ta --out " + path("m.rmmt"));
  ASSERT_EQ(res.status, 0) << res.err;
  EXPECT_NE(res.err.find("warning"), std::string::npos);
  EXPECT_NE(res.out.find("storage_ratio: 14/28 = 0.5 = 50%"), std::string::npos) << res.out;
  auto c = load_container(path("m.rmmt"));
  EXPECT_EQ(c.meta("method"), "ta");
  EXPECT_TRUE(entry_matrix(c.get("l.A")).isZero(0.0));
}

TEST_F(CliTest, BaselineUsageErrors) {
  auto inputs = write_set(planted_set(3, 4));
  EXPECT_EQ(run("merge --inputs " + inputs + " --method dare --out " + path("m.rmmt")).status, 2);
  EXPECT_EQ(run("merge --inputs " + inputs + " --method rmm --out " + path("m.rmmt")).status, 2);
  EXPECT_NE(run("merge --inputs " + inputs + " --method emr --out " + path("m.rmmt")).status, 0);
  EXPECT_EQ(run("bench --methods rmm,dare").status, 2);
  EXPECT_NE(run("merge --inputs " + inputs + "/task0.rmmt --method ta --out " + path("m.rmmt")).status, 0);
}

TEST_F(CliTest, StorageStrings) {
  auto res = run("storage --n 8 --r 16 --p 3");
  ASSERT_EQ(res.status, 0) << res.err;
  EXPECT_EQ(res.out,
            "rmm (n=8, r=16, p=3): 88/128 = 0.6875 = 69%\n"
            "baseline (n=8): 1/8 = 0.125 = 13%\n");
  auto sweep = run("storage --r 16 --p 2 --sweep-n 8..9");
  ASSERT_EQ(sweep.status, 0) << sweep.err;
  EXPECT_EQ(sweep.out,
            "n,p,r,retained,all_models,ratio,percent\n"
            "8,2,16,64,128,0.5,50\n"
            "9,2,16,66,144,0.458333,46\n");
  EXPECT_NE(run("storage --n 2 --r 16 --p 3").status, 0);
}

TEST_F(CliTest, BenchDefaultsRecoverPlantedRank) {
  auto res = run("bench --latent-p 2 --p-list 2 --methods rmm --seed 3");
  ASSERT_EQ(res.status, 0) << res.err;
  auto row = res.out.substr(res.out.find('\n') + 1);
  ASSERT_EQ(row.rfind("rmm,-,8,8,2,3,", 0), 0u) << row;
  EXPECT_LT(std::stod(row.substr(std::string("rmm,-,8,8,2,3,").size())), 1e-8);
  EXPECT_EQ(run("bench --latent-p 2 --p-list 2 --methods rmm --seed 3").out, res.out);
}

TEST_F(CliTest, BenchCsvToFile) {
  auto res = run("bench --n 8 --r 8 --latent-p 3 --seed 1 --p-list 3 --methods rmm,ta,ties:combined,dare --out " +
                 path("b.csv"));
  ASSERT_EQ(res.status, 0) << res.err;
  auto csv = slurp(path("b.csv"));
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "method,mode,n,r,p,seed,mean_rel_error,storage_ratio");
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].rfind("rmm,-,8,8,3,1,", 0), 0u) << rows[0];
  EXPECT_EQ(rows[2].rfind("ties,combined,8,8,0,1,", 0), 0u) << rows[2];
}

TEST_F(CliTest, InspectAndCorruptFiles) {
  TensorContainer c;
  c.set_meta("rank", "1");
  c.add_f32("x.A", {3, 1}, {1.f, 2.f, 3.f});
  save_container(c, path("c.rmmt"));
  auto res = run("inspect --file " + path("c.rmmt"));
  ASSERT_EQ(res.status, 0) << res.err;
  EXPECT_NE(res.out.find("rank = 1"), std::string::npos);
  EXPECT_NE(res.out.find("x.A\tfloat32\t[3, 1]"), std::string::npos) << res.out;

  std::ofstream(path("empty.rmmt")).close();
  auto empty = run("inspect --file " + path("empty.rmmt"));
  EXPECT_EQ(empty.status, 1);
  EXPECT_NE(empty.err.find("error:"), std::string::npos);

  auto bytes = slurp(path("c.rmmt"));
  std::ofstream(path("trunc.rmmt"), std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  auto trunc = run("inspect --file " + path("trunc.rmmt"));
  EXPECT_EQ(trunc.status, 1);
  EXPECT_NE(trunc.err.find("truncated"), std::string::npos) << trunc.err;
}

}  // namespace
}  // namespace rmm
