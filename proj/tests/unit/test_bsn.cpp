// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "mtprop/bsn.hpp"
#include "mtprop/error.hpp"
#include "mtprop/rng.hpp"
#include "oracles.hpp"

namespace mtprop::bsn {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

BoundarySignals signals_from(const std::vector<double>& a, const std::vector<double>& s, const std::vector<double>& e) {
  Matrix m(a.size(), 3);
  for (std::size_t t = 0; t < a.size(); ++t) {
    m(t, 0) = a[t];
    m(t, 1) = s[t];
    m(t, 2) = e[t];
  }
  return {m};
}

Proposal scored(double s, double e, double score) {
  Proposal p;
  p.t_start = s;
  p.t_end = e;
  p.final_score = score;
  return p;
}

TEST(Tem, ShapeRangeDeterminism) {
  for (std::size_t T : {2u, 5u, 37u}) {
    Rng a(1), b(1);
    const auto pa = TemParams::init(4, 8, a);
    const auto pb = TemParams::init(4, 8, b);
    const Matrix x = random_matrix(T, 4, a);
    const auto sa = tem_forward(pa, x);
    EXPECT_EQ(sa.values.rows(), T);
    EXPECT_EQ(sa.values.cols(), 3u);
    for (double v : sa.values.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
    EXPECT_EQ(sa.values, tem_forward(pb, x).values);
  }
  Rng rng(2);
  EXPECT_THROW(tem_forward(TemParams::init(4, 8, rng), Matrix(5, 3)), ValidationError);
}

TEST(TemLoss, HandValues) {
  const auto half = signals_from({0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5});
  const Matrix y(2, 3, std::vector<double>{1, 1, 1, 0, 0, 0});
  EXPECT_NEAR(tem_loss(half, y).loss, 3.0 * std::log(2.0), 1e-12);
  const auto perfect = signals_from({1, 0}, {1, 0}, {1, 0});
  EXPECT_LT(tem_loss(perfect, y).loss, 1e-5);
  EXPECT_THROW(tem_loss(half, Matrix(3, 3)), ValidationError);
}

TEST(TemLoss, NonNegativeAndFiniteOnExtremes) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Matrix p(10, 3), y(10, 3);
    for (double& v : p.data()) v = rng.bernoulli(0.3) ? std::round(rng.uniform()) : rng.uniform();
    for (double& v : y.data()) v = rng.uniform();
    const auto lg = tem_loss({p}, y);
    ASSERT_GE(lg.loss, 0.0);
    ASSERT_TRUE(std::isfinite(lg.loss));
    for (double g : lg.grad.data()) ASSERT_TRUE(std::isfinite(g));
  }
}

TEST(Gradients, TemAndPemMatchFiniteDifferences) {
  Rng rng(4);
  int accepted = 0;
  while (accepted < 25) {
    const std::size_t T = 2 + rng.uniform_int(0, 18), D = 1 + rng.uniform_int(0, 3), H = 1 + rng.uniform_int(0, 7);
    const auto r = oracle::grad_check_instance(rng, T, D, H);
    if (!r.accepted) continue;
    ++accepted;
    EXPECT_LT(r.tem, 1e-4) << "T=" << T << " D=" << D << " H=" << H;
    EXPECT_LT(r.pem, 1e-4) << "H=" << H;
  }
}

TEST(PemLoss, Values) {
  EXPECT_EQ(pem_loss(0.4, 0.4).loss, 0.0);
  EXPECT_EQ(pem_loss(0.0, 1.0).loss, 1.0);
  EXPECT_DOUBLE_EQ(pem_loss(0.7, 0.2).grad, 2 * 0.5);
  const double h = 1e-5;
  const double fd = (pem_loss(0.3 + h, 0.9).loss - pem_loss(0.3 - h, 0.9).loss) / (2 * h);
  EXPECT_NEAR(fd, pem_loss(0.3, 0.9).grad, 1e-9);
}

TEST(Pem, OutputInUnitIntervalAndDeterministic) {
  Rng rng(5);
  const auto pem = PemParams::init(16, rng);
  Matrix bsp(50, kBspLength);
  for (double& v : bsp.data()) v = rng.uniform() * 10 - 5;
  const auto c = pem_forward(pem, bsp);
  ASSERT_EQ(c.size(), 50u);
  for (double v : c) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(c, pem_forward(pem, bsp));
  EXPECT_THROW(pem_forward(pem, Matrix(1, 31)), ValidationError);
}

TEST(Candidates, HandExample) {
  const auto sig = signals_from({0.5, 0.5, 0.5}, {0.1, 0.9, 0.2}, {0.1, 0.2, 0.95});
  const auto c = generate_candidates(sig, {});
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].t_start, 1.0);
  EXPECT_EQ(c[0].t_end, 3.0);
  EXPECT_EQ(c[0].start_prob, 0.9);
  EXPECT_EQ(c[0].end_prob, 0.95);
  EXPECT_EQ(c[0].confidence, 1.0);
}

TEST(Candidates, ConstantSignalsGiveAllPairs) {
  const std::size_t T = 12;
  const std::vector<double> k(T, 0.4);
  EXPECT_EQ(generate_candidates(signals_from(k, k, k), {}).size(), T * (T - 1) / 2);
  CandidateConfig capped;
  capped.max_duration = 3;
  std::size_t expected = 0;
  for (std::size_t s = 0; s < T; ++s)
    for (std::size_t e = s + 1; e < T; ++e) expected += (e - s <= 3) ? 1 : 0;
  EXPECT_EQ(generate_candidates(signals_from(k, k, k), capped).size(), expected);
}

TEST(Candidates, MonotoneSignalOnlyLastIsLocalMax) {
  std::vector<double> p;
  for (int t = 0; t < 10; ++t) p.push_back(0.01 * (t + 1));
  const auto c = boundary_candidates(p, 2.0);
  EXPECT_EQ(c, std::vector<std::size_t>{9});
}

TEST(Candidates, MatchBruteForceRule) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t T = 2 + rng.uniform_int(0, 28);
    std::vector<double> a(T), s(T), e(T);
    for (std::size_t t = 0; t < T; ++t) {
      a[t] = rng.uniform();
      s[t] = rng.bernoulli(0.2) ? 0.5 : rng.uniform();
      e[t] = rng.uniform() * rng.uniform();
    }
    CandidateConfig cfg;
    cfg.max_duration = rng.bernoulli(0.5) ? 0 : 1 + rng.uniform_int(0, 10);
    const std::size_t cap = cfg.max_duration == 0 ? T : cfg.max_duration;
    std::vector<std::pair<double, double>> expected;
    for (std::size_t si = 0; si < T; ++si)
      for (std::size_t ei = 0; ei < T; ++ei)
        if (oracle::is_boundary_candidate(s, si, 0.5) && oracle::is_boundary_candidate(e, ei, 0.5) && ei > si &&
            ei - si <= cap)
          expected.emplace_back(static_cast<double>(si), static_cast<double>(ei + 1));
    const auto got = generate_candidates(signals_from(a, s, e), cfg);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      ASSERT_EQ(got[k].t_start, expected[k].first);
      ASSERT_EQ(got[k].t_end, expected[k].second);
      ASSERT_EQ(got[k].start_prob, s[static_cast<std::size_t>(expected[k].first)]);
      ASSERT_EQ(got[k].end_prob, e[static_cast<std::size_t>(expected[k].second) - 1]);
    }
  }
}

TEST(Bsp, ConstantRampAndSpotCheck) {
  const std::vector<double> flat(20, 0.7);
  Proposal p = scored(4, 9, 1.0);
  for (double v : bsp_features(flat, p)) EXPECT_DOUBLE_EQ(v, 0.7);

  std::vector<double> ramp(20);
  for (std::size_t t = 0; t < 20; ++t) ramp[t] = 0.05 * t;
  const auto f = bsp_features(ramp, p);
  const double step = f[1] - f[0];
  for (std::size_t i = 1; i < 16; ++i) EXPECT_NEAR(f[i] - f[i - 1], step, 1e-12);
  EXPECT_NEAR(f[0], 0.2, 1e-12);
  EXPECT_NEAR(f[15], 0.45, 1e-12);

  // Start-context sample 3: x = 4 - 1 + 3 * (2 / 7) = 3.857142..., between 0.15 and 0.2.
  std::vector<double> bumpy{0.0, 0.3, 0.1, 0.9, 0.4, 0.8, 0.2, 0.6, 0.5, 0.7};
  const auto g = bsp_features(bumpy, scored(4, 9, 1.0));
  const double x = 3.0 + 3.0 * 2.0 / 7.0;
  EXPECT_NEAR(g[16 + 3], 0.9 + (x - 3.0) * (0.4 - 0.9), 1e-12);
  // End context runs past T-1 and clamps.
  EXPECT_DOUBLE_EQ(g[31], 0.7);
  EXPECT_THROW(bsp_features(bumpy, scored(5, 5, 1.0)), ValidationError);
  EXPECT_THROW(bsp_features(bumpy, scored(5, 11, 1.0)), ValidationError);
}

TEST(SoftNms, HandExamples) {
  const auto single = soft_nms({scored(0, 5, 0.6)}, 0.75, 1e-3);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].final_score, 0.6);

  const auto dup = soft_nms({scored(0, 5, 0.8), scored(0, 5, 0.9)}, 0.75, 1e-3);
  ASSERT_EQ(dup.size(), 2u);
  EXPECT_EQ(dup[0].final_score, 0.9);
  EXPECT_NEAR(dup[1].final_score, 0.8 * std::exp(-1.0 / 0.75), 1e-12);
  EXPECT_NEAR(dup[1].final_score, 0.2109, 1e-4);

  const auto disjoint = soft_nms({scored(0, 2, 0.9), scored(3, 5, 0.5), scored(6, 9, 0.7)}, 0.75, 1e-3);
  ASSERT_EQ(disjoint.size(), 3u);
  EXPECT_EQ(disjoint[0].final_score, 0.9);
  EXPECT_EQ(disjoint[1].final_score, 0.7);
  EXPECT_EQ(disjoint[2].final_score, 0.5);
}

std::vector<Proposal> random_proposals(Rng& rng, std::size_t n) {
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(rng.uniform_int(0, 20));
    const double e = s + 1 + static_cast<double>(rng.uniform_int(0, 10));
    out.push_back(scored(s, e, rng.bernoulli(0.1) ? 0.5 : rng.uniform()));
  }
  return out;
}

TEST(SoftNms, MatchesNaiveReferenceExactly) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto props = random_proposals(rng, 1 + rng.uniform_int(0, 30));
    const double floor = rng.bernoulli(0.5) ? 1e-3 : 0.2;
    const std::size_t keep = rng.bernoulli(0.5) ? 0 : 1 + rng.uniform_int(0, 10);
    const auto got = soft_nms(props, 0.75, floor, keep);
    const auto want = oracle::soft_nms(props, 0.75, floor, keep);
    ASSERT_EQ(got, want);
    for (std::size_t k = 1; k < got.size(); ++k) ASSERT_GE(got[k - 1].final_score, got[k].final_score);
  }
}

TEST(SoftNms, LargeSigmaIsNoOpAndScoresNeverIncrease) {
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const auto props = random_proposals(rng, 10);
    const auto out = soft_nms(props, 1e12, 0.0);
    ASSERT_EQ(out.size(), props.size());
    double in_sum = 0, out_sum = 0;
    for (const auto& p : props) in_sum += p.final_score;
    for (const auto& p : out) out_sum += p.final_score;
    ASSERT_NEAR(in_sum, out_sum, 1e-9);
    const auto decayed = soft_nms({scored(0, 5, 0.3), scored(0, 5, 0.3 + 0.5 * rng.uniform())}, 0.75, 0.0);
    ASSERT_LE(decayed[1].final_score, 0.3);
  }
}

TEST(Propose, FinalScoreIsProductAndCapped) {
  Rng rng(9);
  const auto tem = TemParams::init(6, 8, rng);
  const auto pem = PemParams::init(8, rng);
  const Matrix x = random_matrix(40, 6, rng);
  ProposalConfig cfg;
  cfg.nms_sigma = 1e12;
  cfg.nms_floor = 0.0;
  cfg.max_proposals = 1000;
  const auto props = propose(tem, pem, x, cfg);
  ASSERT_FALSE(props.empty());
  for (const auto& p : props) {
    const double product = p.start_prob * p.end_prob * p.confidence;
    EXPECT_LE(p.final_score, product);
    EXPECT_NEAR(p.final_score, product, 1e-9 * product);
    EXPECT_LT(p.t_start, p.t_end);
  }
  ProposalConfig capped;
  capped.max_proposals = 5;
  EXPECT_LE(propose(tem, pem, x, capped).size(), 5u);
}

TEST(MaxTiou, PicksClosestInterval) {
  const std::vector<ActionInterval> gts{{0, 10, 0}, {20, 30, 1}};
  EXPECT_DOUBLE_EQ(max_tiou(scored(21, 30, 1), gts), 0.9);
  EXPECT_EQ(max_tiou(scored(12, 18, 1), gts), 0.0);
  EXPECT_EQ(max_tiou(scored(1, 2, 1), {}), 0.0);
}

}  // namespace
}  // namespace mtprop::bsn
