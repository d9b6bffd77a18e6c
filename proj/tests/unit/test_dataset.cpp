// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mtprop/dataset.hpp"
#include "mtprop/error.hpp"
#include "mtprop/io.hpp"

namespace mtprop {
namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.num_videos = 5;
  return c;
}

TEST(GenerateDataset, ShapesFollowConfig) {
  const auto data = generate_dataset(small_config(), 1);
  ASSERT_EQ(data.size(), 5u);
  for (const auto& v : data.videos) {
    EXPECT_EQ(v.features.rows(), 100u);
    EXPECT_EQ(v.features.cols(), 16u);
  }
}

TEST(GenerateDataset, SameSeedIsBitIdentical) {
  const auto a = generate_dataset(small_config(), 42);
  const auto b = generate_dataset(small_config(), 42);
  EXPECT_EQ(a.videos, b.videos);
  const auto c = generate_dataset(small_config(), 43);
  EXPECT_NE(a.videos, c.videos);
}

TEST(GenerateDataset, IntervalsRespectConfig) {
  DatasetConfig c;
  c.num_videos = 200;
  const auto data = generate_dataset(c, 3);
  for (const auto& v : data.videos) {
    const auto& iv = v.annotation.intervals;
    ASSERT_GE(iv.size(), static_cast<std::size_t>(c.min_intervals));
    ASSERT_LE(iv.size(), static_cast<std::size_t>(c.max_intervals));
    for (std::size_t i = 0; i < iv.size(); ++i) {
      EXPECT_GE(iv[i].duration(), c.min_length);
      EXPECT_LE(iv[i].duration(), c.max_length);
      EXPECT_GE(iv[i].start, c.edge_margin);
      EXPECT_LE(iv[i].end, 100.0 - c.edge_margin);
      EXPECT_GE(iv[i].class_id, 0);
      EXPECT_LT(iv[i].class_id, c.num_classes);
      EXPECT_EQ(iv[i].start, std::floor(iv[i].start));
      if (i > 0) EXPECT_GE(iv[i].start - iv[i - 1].end, c.min_gap);
    }
  }
}

TEST(GenerateDataset, InvalidConfigRejected) {
  DatasetConfig c = small_config();
  c.max_length = 101;
  EXPECT_THROW(generate_dataset(c, 0), ConfigError);
  c = small_config();
  c.min_intervals = 3;
  c.max_intervals = 2;
  EXPECT_THROW(generate_dataset(c, 0), ConfigError);
  c = small_config();
  c.feature_noise_sigma = -1.0;
  EXPECT_THROW(generate_dataset(c, 0), ConfigError);
  c = small_config();
  c.feature_noise_correlation = 1.0;
  EXPECT_THROW(generate_dataset(c, 0), ConfigError);
}

TEST(GenerateDataset, NoiseHasConfiguredVarianceAndLagOneCorrelation) {
  DatasetConfig c = small_config();
  c.num_videos = 200;
  c.background_drift_scale = 0.0;
  c.prototype_scale = 0.0;
  c.feature_noise_sigma = 1.5;
  for (double rho : {0.0, 0.5, 0.9}) {
    c.feature_noise_correlation = rho;
    const auto data = generate_dataset(c, 3);
    double ss = 0.0, lag = 0.0;
    std::size_t n = 0, m = 0;
    for (const auto& v : data.videos) {
      const Matrix& x = v.features;
      for (std::size_t t = 0; t < x.rows(); ++t) {
        for (std::size_t d = 0; d < x.cols(); ++d) {
          ss += x(t, d) * x(t, d);
          ++n;
          if (t > 0) {
            lag += x(t, d) * x(t - 1, d);
            ++m;
          }
        }
      }
    }
    const double var = ss / static_cast<double>(n);
    EXPECT_NEAR(var, 2.25, 0.05 * 2.25) << rho;
    EXPECT_NEAR(lag / static_cast<double>(m) / var, rho, 0.02) << rho;
  }
}

DatasetConfig golden_config() {
  DatasetConfig c;
  c.num_videos = 6;
  c.min_intervals = c.max_intervals = 1;
  c.min_length = c.max_length = 20;
  return c;
}

nlohmann::json golden_snapshot(const Dataset& data) {
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& v : data.videos) {
    const auto& f = v.features.data();
    nlohmann::json iv = nlohmann::json::array();
    for (const auto& i : v.annotation.intervals) iv.push_back({i.start, i.end, i.class_id});
    videos.push_back({{"id", v.annotation.video_id},
                      {"intervals", iv},
                      {"features_fnv1a", io::fnv1a_hex(f.data(), f.size() * sizeof(double))},
                      {"first_row", std::vector<double>(f.begin(), f.begin() + 16)}});
  }
  return {{"seed", 7}, {"dataset_hash", io::dataset_hash(data)}, {"videos", videos}};
}

TEST(GenerateDataset, GoldenFixtureSeed7) {
  const auto data = generate_dataset(golden_config(), 7);
  for (const auto& v : data.videos) {
    ASSERT_EQ(v.annotation.intervals.size(), 1u);
    EXPECT_EQ(v.annotation.intervals[0].duration(), 20.0);
  }
  const std::string path = std::string(MTPROP_FIXTURE_DIR) + "/golden_seed7.json";
  const auto snap = golden_snapshot(data);
  if (std::getenv("MTPROP_REGEN_FIXTURES")) {
    std::ofstream(path) << snap.dump(2) << "\n";
    GTEST_SKIP() << "fixture regenerated";
  }
  std::ifstream in(path);
  ASSERT_TRUE(in.good()) << path;
  const auto expected = nlohmann::json::parse(in);
  EXPECT_EQ(snap, expected);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// In-interval features resampled to a fixed length and flattened.
std::vector<double> segment_signature(const Video& v, const ActionInterval& iv, std::size_t len) {
  std::vector<double> out;
  const std::size_t D = v.features.cols();
  for (std::size_t k = 0; k < len; ++k) {
    const double x = iv.start + (iv.duration() - 1.0) * static_cast<double>(k) / static_cast<double>(len - 1);
    const auto i0 = static_cast<std::size_t>(x);
    const std::size_t i1 = std::min(i0 + 1, static_cast<std::size_t>(iv.end) - 1);
    const double lam = x - static_cast<double>(i0);
    for (std::size_t d = 0; d < D; ++d) out.push_back((1 - lam) * v.features(i0, d) + lam * v.features(i1, d));
  }
  return out;
}

TEST(GenerateDataset, ClassesAreLearnable) {
  DatasetConfig c;
  c.num_videos = 120;
  const auto data = generate_dataset(c, 11);
  std::vector<std::pair<int, std::vector<double>>> segs;
  for (const auto& v : data.videos)
    for (const auto& iv : v.annotation.intervals) segs.emplace_back(iv.class_id, segment_signature(v, iv, 8));
  double within = 0, cross = 0;
  std::size_t nw = 0, nc = 0;
  for (std::size_t i = 0; i < segs.size(); ++i)
    for (std::size_t j = i + 1; j < segs.size(); ++j) {
      const double r = pearson(segs[i].second, segs[j].second);
      if (segs[i].first == segs[j].first) {
        within += r;
        ++nw;
      } else {
        cross += r;
        ++nc;
      }
    }
  ASSERT_GT(nw, 100u);
  EXPECT_GT(within / nw, cross / nc + 0.05);
}

TEST(DeriveTargets, HandEnumeratedExample) {
  VideoAnnotation a{"v", {{2, 8, 0}}, true};
  const auto t = derive_targets(a, 10);
  const std::vector<double> act{0, 0, 1, 1, 1, 1, 1, 1, 0, 0};
  const std::vector<double> st{0, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<double> en{0, 0, 0, 0, 0, 0, 0, 1, 1, 0};
  EXPECT_EQ(t.actionness, act);
  EXPECT_EQ(t.start, st);
  EXPECT_EQ(t.end, en);
}

TEST(DeriveTargets, EmptyAndFullCover) {
  const auto empty = derive_targets({"v", {}, true}, 7);
  for (double x : empty.actionness) EXPECT_EQ(x, 0.0);
  for (double x : empty.start) EXPECT_EQ(x, 0.0);
  for (double x : empty.end) EXPECT_EQ(x, 0.0);
  const auto full = derive_targets({"v", {{0, 7, 1}}, true}, 7);
  for (double x : full.actionness) EXPECT_EQ(x, 1.0);
}

TEST(DeriveTargets, OutOfRangeRejected) {
  EXPECT_THROW(derive_targets({"v", {{-1, 5, 0}}, true}, 10), ValidationError);
  EXPECT_THROW(derive_targets({"v", {{5, 11, 0}}, true}, 10), ValidationError);
}

TEST(DeriveTargets, ActionnessIsUnionIndicator) {
  DatasetConfig c;
  c.num_videos = 300;
  const auto data = generate_dataset(c, 5);
  for (const auto& v : data.videos) {
    const auto t = derive_targets(v.annotation, v.length());
    for (std::size_t s = 0; s < v.length(); ++s) {
      const double center = static_cast<double>(s) + 0.5;
      bool inside = false;
      for (const auto& iv : v.annotation.intervals) inside = inside || (center >= iv.start && center <= iv.end);
      ASSERT_EQ(t.actionness[s], inside ? 1.0 : 0.0);
    }
    double mx = 0;
    for (double x : t.actionness) mx = std::max(mx, x);
    EXPECT_GE(mx, 0.5);
  }
}

TEST(SplitLabels, CountsAndDeterminism) {
  auto s = split_labels(10, 1.0, 0);
  EXPECT_EQ(s.labeled.size(), 10u);
  EXPECT_TRUE(s.unlabeled.empty());
  s = split_labels(10, 0.6, 3);
  EXPECT_EQ(s.labeled.size(), 6u);
  EXPECT_EQ(s.unlabeled.size(), 4u);
  const auto again = split_labels(10, 0.6, 3);
  EXPECT_EQ(s.labeled, again.labeled);
  EXPECT_EQ(s.unlabeled, again.unlabeled);
  EXPECT_THROW(split_labels(10, 1.5, 0), ConfigError);
}

TEST(SplitLabels, PartitionProperty) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t n = 1 + seed % 37;
    const double f = static_cast<double>(seed % 11) / 10.0;
    const auto s = split_labels(n, f, seed);
    std::set<std::size_t> all(s.labeled.begin(), s.labeled.end());
    for (auto u : s.unlabeled) ASSERT_TRUE(all.insert(u).second);
    ASSERT_EQ(all.size(), n);
    ASSERT_EQ(*all.rbegin(), n - 1);
    ASSERT_EQ(s.labeled.size(), static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
  }
}

}  // namespace
}  // namespace mtprop
