// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "rrld/data.hpp"
#include "rrld/data_io.hpp"

namespace {

using rrld::MultiDomainDataset;
using rrld::NoiseKind;
using rrld::NoiseSpec;
using rrld::SynthConfig;

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.classes = 3;
  cfg.domains = 3;
  cfg.per_domain = 30;
  cfg.image_size = 16;
  cfg.seed = 99;
  return cfg;
}

TEST(Synthetic, CountsLabelsAndDeterminism) {
  SynthConfig cfg;
  cfg.classes = 4;
  cfg.domains = 3;
  cfg.per_domain = 100;
  cfg.seed = 5;
  auto ds = rrld::generate_synthetic(cfg);
  EXPECT_EQ(ds.samples.size(), 300u);
  EXPECT_EQ(ds.domains.size(), 3u);
  for (const auto& d : ds.domains) {
    std::map<int, int> hist;
    for (auto i : ds.domain_indices(d)) ++hist[ds.samples[i].label];
    for (int c = 0; c < cfg.classes; ++c)
      EXPECT_NEAR(hist[c], 100.0 / cfg.classes, 1.0) << d;
  }
  auto ds2 = rrld::generate_synthetic(cfg);
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    ASSERT_EQ(ds.samples[i].image.pix, ds2.samples[i].image.pix);

  SynthConfig bad = cfg;
  bad.domains = 1;
  EXPECT_THROW(rrld::generate_synthetic(bad), rrld::ConfigError);
}

TEST(Protocol, FloorSplitAndDisjointness) {
  auto ds = rrld::generate_synthetic(small_config());
  for (const auto& target : ds.domains) {
    auto split = rrld::build_protocol(ds, target, 7);
    // floor-80/20 per non-target domain
    EXPECT_EQ(split.train.size(), 2u * 24u);
    EXPECT_EQ(split.unified_val.size(), 2u * 6u);
    EXPECT_EQ(split.test.size(), 30u);
    std::set<std::size_t> train(split.train.begin(), split.train.end());
    std::set<std::size_t> val(split.unified_val.begin(), split.unified_val.end());
    std::set<std::size_t> test(split.test.begin(), split.test.end());
    EXPECT_EQ(train.size() + val.size() + test.size(), ds.samples.size());
    for (auto i : train) EXPECT_FALSE(val.count(i) || test.count(i));
    for (auto i : val) EXPECT_FALSE(test.count(i));
    for (auto i : train) EXPECT_NE(ds.samples[i].domain, target);
    for (auto i : val) EXPECT_NE(ds.samples[i].domain, target);
    for (auto i : test) EXPECT_EQ(ds.samples[i].domain, target);
  }
  // determinism and error paths
  auto a = rrld::build_protocol(ds, "domain0", 3);
  auto b = rrld::build_protocol(ds, "domain0", 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.unified_val, b.unified_val);
  EXPECT_THROW(rrld::build_protocol(ds, "nope", 3), rrld::ValueError);
}

TEST(Protocol, EightyTwentyOnHundred) {
  SynthConfig cfg = small_config();
  cfg.per_domain = 100;
  cfg.classes = 2;
  cfg.domains = 2;
  auto ds = rrld::generate_synthetic(cfg);
  auto split = rrld::build_protocol(ds, "domain1", 1);
  EXPECT_EQ(split.train.size(), 80u);
  EXPECT_EQ(split.unified_val.size(), 20u);
}

TEST(Batches, SizesPermutationDeterminism) {
  std::vector<std::size_t> idx(100);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto bs = rrld::batches(idx, 32, 5);
  ASSERT_EQ(bs.size(), 4u);
  EXPECT_EQ(bs[0].size(), 32u);
  EXPECT_EQ(bs[3].size(), 4u);
  std::multiset<std::size_t> seen;
  for (const auto& b : bs) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen, std::multiset<std::size_t>(idx.begin(), idx.end()));
  EXPECT_EQ(rrld::batches(idx, 32, 5), bs);
  EXPECT_NE(rrld::batches(idx, 32, 6), bs);
  EXPECT_THROW(rrld::batches({}, 32, 5), rrld::ValueError);

  auto oh = rrld::one_hot<double>({2, 0}, 4);
  EXPECT_EQ(oh[0], (std::vector<double>{0, 0, 1, 0}));
  EXPECT_EQ(oh[1], (std::vector<double>{1, 0, 0, 0}));
}

TEST(Noise, DegenerateAndSaturatedCases) {
  auto ds = rrld::generate_synthetic(small_config());
  const rrld::Image& img = ds.samples[0].image;

  std::mt19937_64 rng(1);
  NoiseSpec zero{NoiseKind::kGaussian, 0.0, 0};
  EXPECT_EQ(rrld::corrupt_image(img, zero, rng).pix, img.pix);

  NoiseSpec full{NoiseKind::kImpulse, 1.0, 0};
  auto salted = rrld::corrupt_image(img, full, rng);
  for (float v : salted.pix) EXPECT_TRUE(v == 0.f || v == 1.f);

  for (NoiseKind k : {NoiseKind::kGaussian, NoiseKind::kImpulse,
                      NoiseKind::kSpeckle, NoiseKind::kShot}) {
    NoiseSpec spec{k, rrld::default_noise_param(k), 0};
    auto noisy = rrld::corrupt_image(img, spec, rng);
    for (float v : noisy.pix) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
  }
  EXPECT_THROW(rrld::parse_noise_kind("salt"), rrld::ConfigError);
}

TEST(Noise, CorruptDoublesDatasetPreservingLabels) {
  SynthConfig cfg = small_config();
  cfg.domains = 2;
  auto ds = rrld::generate_synthetic(cfg);
  std::vector<NoiseSpec> specs;
  for (NoiseKind k : {NoiseKind::kGaussian, NoiseKind::kImpulse,
                      NoiseKind::kSpeckle, NoiseKind::kShot})
    specs.push_back({k, rrld::default_noise_param(k), 0});
  auto out = rrld::corrupt(ds, specs, 42);
  EXPECT_EQ(out.samples.size(), 2 * ds.samples.size());
  EXPECT_EQ(out.domains.size(), 2 * ds.domains.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& noisy = out.samples[ds.samples.size() + i];
    EXPECT_EQ(noisy.label, ds.samples[i].label);
    EXPECT_EQ(noisy.domain, ds.samples[i].domain + "_noisy");
    EXPECT_EQ(noisy.image.pix.size(), ds.samples[i].image.pix.size());
  }
  // original object untouched
  EXPECT_EQ(ds.samples.size(), 2u * 30u);
  // determinism
  auto out2 = rrld::corrupt(ds, specs, 42);
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    ASSERT_EQ(out.samples[i].image.pix, out2.samples[i].image.pix);
}

TEST(AccessLog, TracksReadsPerDomain) {
  auto ds = rrld::generate_synthetic(small_config());
  rrld::AccessLog log;
  rrld::TrackedView view(ds, &log);
  auto idx = ds.domain_indices("domain1");
  for (auto i : idx) (void)view.at(i);
  EXPECT_EQ(log.count("domain1"), idx.size());
  EXPECT_EQ(log.count("domain0"), 0u);
}

TEST(ImageFolder, RoundTripAndErrors) {
  namespace fs = std::filesystem;
  SynthConfig cfg;
  cfg.classes = 3;
  cfg.domains = 2;
  cfg.per_domain = 12;
  cfg.image_size = 16;
  cfg.seed = 3;
  auto ds = rrld::generate_synthetic(cfg);
  std::string root = testing::TempDir() + "/folder_ds";
  fs::remove_all(root);
  rrld::save_image_folder(ds, root);

  auto loaded = rrld::load_image_folder(root, 16);
  EXPECT_EQ(loaded.samples.size(), 24u);
  EXPECT_EQ(loaded.domains.size(), 2u);
  EXPECT_EQ(loaded.class_names.size(), 3u);
  // loading twice gives identical ordering and content
  auto loaded2 = rrld::load_image_folder(root, 16);
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    ASSERT_EQ(loaded.samples[i].domain, loaded2.samples[i].domain);
    ASSERT_EQ(loaded.samples[i].label, loaded2.samples[i].label);
    ASSERT_EQ(loaded.samples[i].image.pix, loaded2.samples[i].image.pix);
  }
  // PNG quantization round trip: loaded pixels match the saved ones exactly
  // on the 8-bit grid
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& orig = ds.samples[i];
    bool found = false;
    for (const auto& l : loaded.samples) {
      if (l.domain != orig.domain || l.label != orig.label) continue;
      bool same = true;
      for (std::size_t p = 0; p < orig.image.pix.size(); ++p)
        if (std::lround(orig.image.pix[p] * 255.f) !=
            std::lround(l.image.pix[p] * 255.f)) {
          same = false;
          break;
        }
      if (same) found = true;
    }
    EXPECT_TRUE(found) << "sample " << i;
  }

  // asymmetric class sets are rejected
  fs::remove_all(fs::path(root) / "domain1" / "class2");
  EXPECT_THROW(rrld::load_image_folder(root, 16), rrld::IoError);
  EXPECT_THROW(rrld::load_image_folder(root + "/nope", 16), rrld::IoError);
}

}  // namespace
