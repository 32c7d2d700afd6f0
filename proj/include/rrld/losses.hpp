// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rrld/common.hpp"
#include "rrld/graph.hpp"

namespace rrld {

// Temperatures and weights of the combined objective
//   total = ce + lambda * ibsd + gamma * agsd.
struct LossConfig {
  double t1 = 5.0;      // distillation temperature, intermediate-block term
  double t2 = 1.0;      // distillation temperature, augmentation term
  double lambda = 0.2;  // weight on the intermediate-block term
  double gamma = 1.0;   // weight on the augmentation term
  // Detach the final-block logits in the intermediate-block term instead of
  // letting gradients flow through both arguments. Off by default.
  bool detach_ibsd_teacher = false;

  void validate() const {
    if (!(t1 > 0.0)) throw ConfigError("LossConfig: t1 must be > 0");
    if (!(t2 > 0.0)) throw ConfigError("LossConfig: t2 must be > 0");
    if (lambda < 0.0) throw ConfigError("LossConfig: lambda must be >= 0");
    if (gamma < 0.0) throw ConfigError("LossConfig: gamma must be >= 0");
  }
};

template <typename T>
struct LossBreakdown {
  T ce = T(0);
  T ibsd = T(0);
  T agsd = T(0);
  T total = T(0);
};

inline constexpr double kLogEps = 1e-12;

// Temperature softmax of one logit row, max-subtracted for stability.
template <typename T>
std::vector<T> softmax_temp(const std::vector<T>& logits, T temperature) {
  if (!(temperature > T(0))) throw ValueError("softmax_temp: T must be > 0");
  if (logits.empty()) throw DimensionError("softmax_temp: empty logits");
  for (T v : logits)
    if (!std::isfinite(static_cast<double>(v)))
      throw ValueError("softmax_temp: non-finite logit");
  T mx = logits[0] / temperature;
  for (T v : logits) mx = std::max(mx, v / temperature);
  std::vector<T> out(logits.size());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    sum += out[i];
  }
  for (T& v : out) v /= sum;
  return out;
}

// KL(p || q) with p_j = 0 terms contributing zero and q clamped at 1e-12
// inside the log.
template <typename T>
T kl_div(const std::vector<T>& p, const std::vector<T>& q) {
  if (p.size() != q.size()) throw DimensionError("kl_div: length mismatch");
  T out = T(0);
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= T(0)) continue;
    out += p[j] * (std::log(p[j]) - std::log(std::max(q[j], T(kLogEps))));
  }
  return out;
}

// Mean over batch rows of KL(softmax(l_n/T1) || softmax(l_i/T1)).
template <typename T>
T ibsd_loss(const std::vector<std::vector<T>>& final_logits,
            const std::vector<std::vector<T>>& tapped_logits, T t1) {
  if (final_logits.size() != tapped_logits.size() || final_logits.empty())
    throw DimensionError("ibsd_loss: batch shape mismatch");
  T out = T(0);
  for (std::size_t r = 0; r < final_logits.size(); ++r)
    out += kl_div(softmax_temp(final_logits[r], t1),
                  softmax_temp(tapped_logits[r], t1));
  return out / static_cast<T>(final_logits.size());
}

// Mean over batch rows of KL(softmax(l_n/T2) || softmax(l_an/T2)). The
// augmented logits are plain values here; the gradient rule (no flow through
// l_an) is enforced where the graph version is assembled.
template <typename T>
T agsd_loss(const std::vector<std::vector<T>>& final_logits,
            const std::vector<std::vector<T>>& augmented_logits, T t2) {
  if (final_logits.size() != augmented_logits.size() || final_logits.empty())
    throw DimensionError("agsd_loss: batch shape mismatch");
  T out = T(0);
  for (std::size_t r = 0; r < final_logits.size(); ++r)
    out += kl_div(softmax_temp(final_logits[r], t2),
                  softmax_temp(augmented_logits[r], t2));
  return out / static_cast<T>(final_logits.size());
}

// Mean over batch rows of -log(y_hat at the true index).
template <typename T>
T cross_entropy(const std::vector<std::vector<T>>& onehot,
                const std::vector<std::vector<T>>& probs) {
  if (onehot.size() != probs.size() || onehot.empty())
    throw DimensionError("cross_entropy: batch shape mismatch");
  T out = T(0);
  for (std::size_t r = 0; r < onehot.size(); ++r) {
    const auto& y = onehot[r];
    const auto& p = probs[r];
    if (y.size() != p.size())
      throw DimensionError("cross_entropy: row length mismatch");
    int hot = -1;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] == T(1) && hot < 0)
        hot = static_cast<int>(j);
      else if (y[j] != T(0))
        throw ValueError("cross_entropy: label row is not one-hot");
    }
    if (hot < 0) throw ValueError("cross_entropy: label row is not one-hot");
    out -= std::log(std::max(p[static_cast<std::size_t>(hot)], T(kLogEps)));
  }
  return out / static_cast<T>(onehot.size());
}

template <typename T>
LossBreakdown<T> total_loss(T ce, T ibsd, T agsd, const LossConfig& cfg) {
  auto check = [](T v, const char* name) {
    if (!std::isfinite(static_cast<double>(v)))
      throw ValueError(std::string("total_loss: non-finite component ") + name);
  };
  check(ce, "ce");
  check(ibsd, "ibsd");
  check(agsd, "agsd");
  LossBreakdown<T> out;
  out.ce = ce;
  out.ibsd = ibsd;
  out.agsd = agsd;
  out.total = ce + static_cast<T>(cfg.lambda) * ibsd +
              static_cast<T>(cfg.gamma) * agsd;
  return out;
}

}  // namespace rrld
