// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rrld/losses.hpp"

namespace {

using Vec = std::vector<double>;
using Batch = std::vector<Vec>;

// -- independent oracles ----------------------------------------------------
// Naive direct-summation implementations, deliberately written without the
// stabilized formulations used by the library.

Vec oracle_softmax(const Vec& l, double t) {
  Vec e(l.size());
  double s = 0;
  for (std::size_t i = 0; i < l.size(); ++i) s += (e[i] = std::exp(l[i] / t));
  for (auto& v : e) v /= s;
  return e;
}

double oracle_kl(const Vec& p, const Vec& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

double oracle_mean_kl(const Batch& a, const Batch& b, double t) {
  double s = 0;
  for (std::size_t r = 0; r < a.size(); ++r)
    s += oracle_kl(oracle_softmax(a[r], t), oracle_softmax(b[r], t));
  return s / static_cast<double>(a.size());
}

double oracle_ce(const std::vector<int>& labels, const Batch& probs) {
  double s = 0;
  for (std::size_t r = 0; r < labels.size(); ++r)
    s -= std::log(probs[r][static_cast<std::size_t>(labels[r])]);
  return s / static_cast<double>(labels.size());
}

Vec random_logits(std::mt19937_64& rng, int c) {
  Vec v(c);
  for (auto& x : v) x = rrld::normal(rng) * 3.0;
  return v;
}

TEST(Softmax, HandValues) {
  Vec u = rrld::softmax_temp<double>({0, 0, 0}, 3.7);
  for (double v : u) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);

  Vec a = rrld::softmax_temp<double>({1, 0}, 1.0);
  double e = std::exp(1.0);
  EXPECT_NEAR(a[0], e / (1 + e), 1e-12);
  EXPECT_NEAR(a[1], 1 / (1 + e), 1e-12);
  EXPECT_NEAR(a[0], 0.7311, 1e-4);

  Vec b = rrld::softmax_temp<double>({1, 0}, 5.0);
  EXPECT_NEAR(b[0], 0.5498, 1e-4);
  EXPECT_NEAR(b[1], 0.4502, 1e-4);

  EXPECT_THROW(rrld::softmax_temp<double>({1, 0}, 0.0), rrld::ValueError);
  EXPECT_THROW(rrld::softmax_temp<double>({1, 0}, -2.0), rrld::ValueError);
  EXPECT_THROW(rrld::softmax_temp<double>({1, std::nan("")}, 1.0),
               rrld::ValueError);
}

TEST(Softmax, SumsToOneAndTemperatureLimits) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    int c = 2 + static_cast<int>(rrld::uniform_index(rng, 15));
    Vec l = random_logits(rng, c);
    {  // ensure a clear argmax so the cold-temperature limit is well posed
      Vec s = l;
      std::sort(s.begin(), s.end());
      if (s[s.size() - 1] - s[s.size() - 2] < 0.05) {
        --trial;
        continue;
      }
    }
    Vec p = rrld::softmax_temp(l, 0.5 + rrld::uniform_real(rng) * 10);
    double sum = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);

    // T -> inf approaches uniform
    Vec hot = rrld::softmax_temp(l, 1e9);
    for (double v : hot) EXPECT_NEAR(v, 1.0 / c, 1e-6);

    // T -> 0+ approaches one-hot at the argmax; argmax itself is invariant
    std::size_t amax = static_cast<std::size_t>(
        std::max_element(l.begin(), l.end()) - l.begin());
    Vec cold = rrld::softmax_temp(l, 1e-3);
    EXPECT_GT(cold[amax], 0.999);
    Vec warm = rrld::softmax_temp(l, 7.0);
    EXPECT_EQ(static_cast<std::size_t>(
                  std::max_element(warm.begin(), warm.end()) - warm.begin()),
              amax);
  }
}

TEST(KlDiv, IdentityAndHandValue) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec p = oracle_softmax(random_logits(rng, 4), 1.0);
    EXPECT_NEAR(rrld::kl_div(p, p), 0.0, 1e-9);
  }
  Vec p = {0.7311, 0.2689}, q = {0.2689, 0.7311};
  EXPECT_NEAR(rrld::kl_div(p, q), 0.4621, 1e-3);
  // exact closed form at softmax([1,0]) vs its reverse: (e-1)/(e+1)
  Vec a = oracle_softmax({1, 0}, 1.0);
  Vec b = {a[1], a[0]};
  double e = std::exp(1.0);
  EXPECT_NEAR(rrld::kl_div(a, b), (e - 1) / (e + 1), 1e-12);
  EXPECT_THROW(rrld::kl_div(p, {0.5}), rrld::DimensionError);
}

TEST(KlDiv, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    int c = 2 + static_cast<int>(rrld::uniform_index(rng, 15));
    Vec p = oracle_softmax(random_logits(rng, c), 1.0);
    Vec q = oracle_softmax(random_logits(rng, c), 1.0);
    EXPECT_NEAR(rrld::kl_div(p, q), oracle_kl(p, q), 1e-9);
  }
}

TEST(IbsdLoss, HandValuesAndOracle) {
  Batch ln = {{1, 0}}, li = {{0, 1}};
  EXPECT_NEAR(rrld::ibsd_loss(ln, ln, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(rrld::ibsd_loss(ln, li, 1.0), 0.4621, 1e-3);
  EXPECT_NEAR(rrld::ibsd_loss(ln, li, 5.0), 0.01993, 1e-4);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    int c = 2 + static_cast<int>(rrld::uniform_index(rng, 15));
    int bsz = 1 + static_cast<int>(rrld::uniform_index(rng, 4));
    Batch a, b;
    for (int r = 0; r < bsz; ++r) {
      a.push_back(random_logits(rng, c));
      b.push_back(random_logits(rng, c));
    }
    double t = 0.5 + rrld::uniform_real(rng) * 8;
    EXPECT_NEAR(rrld::ibsd_loss(a, b, t), oracle_mean_kl(a, b, t), 1e-9);
    EXPECT_NEAR(rrld::agsd_loss(a, b, t), oracle_mean_kl(a, b, t), 1e-9);
    EXPECT_GE(rrld::ibsd_loss(a, b, t), 0.0);
  }
  EXPECT_THROW(rrld::ibsd_loss(ln, {}, 1.0), rrld::DimensionError);
}

TEST(CrossEntropy, HandValuesAndOracle) {
  Batch y = {{0, 1, 0}};
  EXPECT_NEAR(rrld::cross_entropy(y, {{0.0, 1.0, 0.0}}), 0.0, 1e-12);
  EXPECT_NEAR(rrld::cross_entropy(y, {{0.25, 0.5, 0.25}}), std::log(2.0), 1e-9);
  Batch yu = {{1, 0, 0, 0, 0}};
  EXPECT_NEAR(rrld::cross_entropy(yu, {{0.2, 0.2, 0.2, 0.2, 0.2}}),
              std::log(5.0), 1e-12);
  EXPECT_THROW(rrld::cross_entropy(Batch{{0.5, 0.5}}, Batch{{0.5, 0.5}}),
               rrld::ValueError);
  EXPECT_THROW(rrld::cross_entropy(Batch{{0, 0}}, Batch{{0.5, 0.5}}),
               rrld::ValueError);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    int c = 2 + static_cast<int>(rrld::uniform_index(rng, 15));
    int bsz = 1 + static_cast<int>(rrld::uniform_index(rng, 4));
    Batch onehot, probs;
    std::vector<int> labels;
    for (int r = 0; r < bsz; ++r) {
      int lab = static_cast<int>(rrld::uniform_index(rng, c));
      labels.push_back(lab);
      Vec row(c, 0.0);
      row[lab] = 1.0;
      onehot.push_back(row);
      probs.push_back(oracle_softmax(random_logits(rng, c), 1.0));
    }
    EXPECT_NEAR(rrld::cross_entropy(onehot, probs), oracle_ce(labels, probs),
                1e-9);
  }
}

TEST(TotalLoss, ArithmeticAndDegenerateWeights) {
  rrld::LossConfig cfg;  // defaults lambda=0.2, gamma=1
  auto b = rrld::total_loss(1.0, 0.5, 0.25, cfg);
  EXPECT_DOUBLE_EQ(b.total, 1.35);
  EXPECT_NEAR(b.total, b.ce + cfg.lambda * b.ibsd + cfg.gamma * b.agsd, 1e-9);

  rrld::LossConfig erm;
  erm.lambda = 0;
  erm.gamma = 0;
  EXPECT_DOUBLE_EQ(rrld::total_loss(0.9, 5.0, 7.0, erm).total, 0.9);

  EXPECT_THROW(
      rrld::total_loss(std::numeric_limits<double>::infinity(), 0.0, 0.0, cfg),
      rrld::ValueError);
  rrld::LossConfig bad;
  bad.t1 = 0;
  EXPECT_THROW(bad.validate(), rrld::ConfigError);
}

// The tape's fused loss nodes must agree with the reference functions.
TEST(GraphLosses, MatchPlainImplementations) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    int c = 2 + static_cast<int>(rrld::uniform_index(rng, 15));
    int bsz = 1 + static_cast<int>(rrld::uniform_index(rng, 4));
    rrld::Matd la(bsz, c), lb(bsz, c);
    Batch va(bsz), vb(bsz);
    std::vector<int> labels(bsz);
    for (int r = 0; r < bsz; ++r) {
      va[r] = random_logits(rng, c);
      vb[r] = random_logits(rng, c);
      for (int j = 0; j < c; ++j) {
        la(r, j) = va[r][static_cast<std::size_t>(j)];
        lb(r, j) = vb[r][static_cast<std::size_t>(j)];
      }
      labels[r] = static_cast<int>(rrld::uniform_index(rng, c));
    }
    double t = 0.5 + rrld::uniform_real(rng) * 8;
    rrld::Graph<double> g;
    int a = g.input(la, false), b = g.input(lb, false);
    EXPECT_NEAR(g.value(g.kl_temperature(a, b, t))(0, 0),
                rrld::ibsd_loss(va, vb, t), 1e-9);
    Batch onehot(bsz), probs(bsz);
    for (int r = 0; r < bsz; ++r) {
      onehot[r].assign(static_cast<std::size_t>(c), 0.0);
      onehot[r][static_cast<std::size_t>(labels[r])] = 1.0;
      probs[r] = rrld::softmax_temp(va[r], 1.0);
    }
    EXPECT_NEAR(g.value(g.cross_entropy(a, labels))(0, 0),
                rrld::cross_entropy(onehot, probs), 1e-9);
  }
}

}  // namespace
