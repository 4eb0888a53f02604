// Copyright 2026 The RMM Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "rmm/bench.hpp"
#include "rmm/bundle_io.hpp"

namespace rmm {
namespace {

RmmBundle sample_bundle(Index p = 2) {
  SyntheticConfig cfg;
  cfg.n = 4;
  cfg.layers = 2;
  cfg.m = 5;
  cfg.d = 3;
  cfg.r = 3;
  cfg.latent_p = 2;
  cfg.noise = 0.1;
  cfg.seed = 3;
  auto set = generate_synthetic_set(cfg);
  set.models[0].layers[1].layer_name = set.models[1].layers[1].layer_name = set.models[2].layers[1].layer_name =
      set.models[3].layers[1].layer_name = "blocks.1/attn.v";
  return merge_rmm(set, p);
}

void expect_same_bundle(const RmmBundle& a, const RmmBundle& b, double tol) {
  ASSERT_EQ(a.n, b.n);
  ASSERT_EQ(a.r, b.r);
  ASSERT_EQ(a.p, b.p);
  ASSERT_EQ(a.layers, b.layers);
  ASSERT_EQ(a.positions.size(), b.positions.size());
  for (std::size_t k = 0; k < a.positions.size(); ++k) {
    EXPECT_LE((a.positions[k].w - b.positions[k].w).cwiseAbs().maxCoeff(), tol);
    EXPECT_LE((a.positions[k].c - b.positions[k].c).cwiseAbs().maxCoeff(), tol);
    EXPECT_LE((a.positions[k].mu - b.positions[k].mu).cwiseAbs().maxCoeff(), tol);
  }
}

std::uint64_t stored_scalars(const TensorContainer& c) {
  std::uint64_t total = 0;
  for (const auto& e : c.entries()) total += e.size();
  return total;
}

TEST(BundleIo, PackedLayoutShapesAndMetadata) {
  auto bundle = sample_bundle();
  auto c = bundle_to_container(bundle);
  EXPECT_EQ(c.meta("n"), "4");
  EXPECT_EQ(c.meta("r"), "3");
  EXPECT_EQ(c.meta("p"), "2");
  EXPECT_EQ(c.meta("layout"), "packed");
  EXPECT_EQ(parse_layer_shapes(*c.meta("layer_shapes")), bundle.layers);
  const auto& w = c.get("blocks.1/attn.v.W_all");
  EXPECT_EQ(w.shape, (std::vector<std::uint64_t>{8, 3, 2}));
  EXPECT_EQ(w.dtype(), DType::kFloat32);
  EXPECT_EQ(c.get("layer0.C_all").shape, (std::vector<std::uint64_t>{8, 4, 2}));
  EXPECT_EQ(c.get("layer0.mu_all").shape, (std::vector<std::uint64_t>{8, 3}));
  EXPECT_EQ(c.entries().size(), 6u);
}

TEST(BundleIo, UnpackedLayoutNames) {
  auto bundle = sample_bundle();
  auto c = bundle_to_container(bundle, {DType::kFloat64, BundleLayout::kUnpacked});
  EXPECT_EQ(c.meta("layout"), "unpacked");
  EXPECT_EQ(c.get("layer0.pos0.W").shape, (std::vector<std::uint64_t>{3, 2}));
  EXPECT_EQ(c.get("layer0.pos7.C").shape, (std::vector<std::uint64_t>{4, 2}));
  EXPECT_EQ(c.get("blocks.1/attn.v.pos7.mu").shape, (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(c.entries().size(), 2u * 8 * 3);
}

TEST(BundleIo, Float64RoundTripIsExactInBothLayouts) {
  auto bundle = sample_bundle();
  for (auto layout : {BundleLayout::kPacked, BundleLayout::kUnpacked}) {
    auto bytes = serialize_container(bundle_to_container(bundle, {DType::kFloat64, layout}));
    expect_same_bundle(bundle, bundle_from_container(read_container(bytes)), 0.0);
  }
}

TEST(BundleIo, Float32RoundTripIsCloseAndReencodesIdentically) {
  auto bundle = sample_bundle();
  auto c = bundle_to_container(bundle);
  auto back = bundle_from_container(read_container(serialize_container(c)));
  expect_same_bundle(bundle, back, 1e-6 * 10);
  EXPECT_EQ(serialize_container(bundle_to_container(back)), serialize_container(c));
}

TEST(BundleIo, StoredScalarCountMatchesFormula) {
  for (Index p : {1, 2, 3}) {
    auto bundle = sample_bundle(p);
    const std::uint64_t n = 4, r = 3, pp = static_cast<std::uint64_t>(p);
    const std::uint64_t expected = 2 * (5 + 3) * (pp * (r + n) + r);
    EXPECT_EQ(stored_scalars(bundle_to_container(bundle)), expected);
    EXPECT_EQ(stored_scalars(bundle_to_container(bundle, {DType::kFloat64, BundleLayout::kUnpacked})), expected);
  }
}

TEST(BundleIo, CorruptBundlesAreRejected) {
  auto c = bundle_to_container(sample_bundle());
  {
    TensorContainer missing;
    for (const auto& [k, v] : c.metadata()) missing.set_meta(k, v);
    for (const auto& e : c.entries()) {
      if (e.name != "layer0.C_all") missing.add(e);
    }
    EXPECT_THROW(bundle_from_container(missing), FormatError);
  }
  {
    auto bad = c;
    bad.set_meta("p", "two");
    EXPECT_THROW(bundle_from_container(bad), FormatError);
  }
  {
    auto bad = c;
    bad.set_meta("p", "5");
    EXPECT_THROW(bundle_from_container(bad), FormatError);
  }
  {
    auto bad = c;
    bad.set_meta("layer_shapes", "[{\"name\": 1}]");
    EXPECT_THROW(bundle_from_container(bad), FormatError);
  }
  {
    auto bad = c;
    bad.set_meta("n", "3");
    EXPECT_THROW(bundle_from_container(bad), FormatError);
  }
}

}  // namespace
}  // namespace rmm
