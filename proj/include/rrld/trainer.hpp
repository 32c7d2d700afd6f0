// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "rrld/augment.hpp"
#include "rrld/backbone.hpp"
#include "rrld/data.hpp"
#include "rrld/losses.hpp"

namespace rrld {

enum class Variant { kErm, kErmAa, kIbsdOnly, kAgsdOnly, kRrld };

inline const std::vector<std::pair<std::string, Variant>>& variant_names() {
  static const std::vector<std::pair<std::string, Variant>> v = {
      {"ERM", Variant::kErm},
      {"ERM_AA", Variant::kErmAa},
      {"IBSD_only", Variant::kIbsdOnly},
      {"AGSD_only", Variant::kAgsdOnly},
      {"RRLD", Variant::kRrld}};
  return v;
}

inline Variant parse_variant(const std::string& name) {
  for (const auto& [n, v] : variant_names())
    if (n == name) return v;
  std::string known;
  for (const auto& [n, v] : variant_names()) known += n + " ";
  throw ConfigError("unknown variant '" + name + "'; expected one of: " + known);
}

inline std::string variant_name(Variant v) {
  for (const auto& [n, vv] : variant_names())
    if (vv == v) return n;
  throw ConfigError("unknown variant");
}

// How the augmented-path logits are produced. Both modes yield bit-identical
// values and gradients; kFrozen exists to demonstrate that equivalence, and
// kLive is a self-test hook that deliberately breaks the stop-gradient rule.
enum class StopGradMode { kNoGrad, kFrozen, kLive };

struct TrainConfig {
  LossConfig loss;
  Variant variant = Variant::kRrld;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  int batch_size = 32;
  int max_steps = 2000;
  int eval_every = 0;  // 0 = once per epoch-equivalent
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string precision = "float32";  // or "float64"
  double grad_clip = 0.0;             // 0 = off
  int min_tap_block = 1;              // eligible tap range [min_tap_block, depth-1]
  bool log_logits = false;            // per-step logits in the metrics stream
  bool base_augment = false;          // flip/shift x before the policy pipeline
  StopGradMode stop_grad = StopGradMode::kNoGrad;
  int workers = 1;  // parallelism across (target, seed) runs

  void validate() const {
    loss.validate();
    if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (max_steps < 0) throw ConfigError("TrainConfig: max_steps must be >= 0");
    if (seeds.empty()) throw ConfigError("TrainConfig: seeds must be nonempty");
    if (precision != "float32" && precision != "float64")
      throw ConfigError("TrainConfig: precision must be float32 or float64");
    if (min_tap_block < 1) throw ConfigError("TrainConfig: min_tap_block must be >= 1");
  }
};

// Decoupled weight-decay adaptive-moment optimizer. Weight decay multiplies
// parameters by (1 - lr*wd) independently of the gradient step.
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamW(const Model<T>& model) {
    for (const auto& [name, p] : model.params) {
      m_.push_back(MatX<T>::Zero(p.rows(), p.cols()));
      v_.push_back(MatX<T>::Zero(p.rows(), p.cols()));
    }
  }

  void step(Model<T>& model, const std::vector<MatX<T>>& grads, double lr,
            double weight_decay) {
    if (grads.size() != model.params.size())
      throw DimensionError("AdamW: gradient count mismatch");
    ++t_;
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1, t_));
    const T bc2 = static_cast<T>(1.0 - std::pow(beta2, t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& p = model.params[i].second;
      const auto& g = grads[i];
      if (g.rows() != p.rows() || g.cols() != p.cols())
        throw DimensionError("AdamW: gradient shape mismatch at " +
                             model.params[i].first);
      m_[i] = static_cast<T>(beta1) * m_[i] + static_cast<T>(1 - beta1) * g;
      v_[i] = (static_cast<T>(beta2) * v_[i].array() +
               static_cast<T>(1 - beta2) * g.array().square())
                  .matrix();
      auto mhat = (m_[i] / bc1).array();
      auto vhat = (v_[i] / bc2).array();
      p.array() -= static_cast<T>(lr) * mhat / (vhat.sqrt() + static_cast<T>(eps));
      if (weight_decay != 0.0)
        p *= static_cast<T>(1.0 - lr * weight_decay);
    }
  }

  int iterations() const { return t_; }
  std::vector<std::pair<std::string, MatX<T>>> named_state(
      const Model<T>& model) const {
    std::vector<std::pair<std::string, MatX<T>>> out;
    for (std::size_t i = 0; i < m_.size(); ++i) {
      out.emplace_back("opt.m." + model.params[i].first, m_[i]);
      out.emplace_back("opt.v." + model.params[i].first, v_[i]);
    }
    return out;
  }

 private:
  std::vector<MatX<T>> m_, v_;
  int t_ = 0;
};

template <typename T>
struct StepRecord {
  int step = 0;
  LossBreakdown<T> loss;
  int block_index = 0;  // 0 when the variant taps no block
  MatX<T> final_logits, tapped_logits, augmented_logits;  // when log_logits
  std::vector<int> labels;
};

// One optimization step following the fixed sequence: augment, sample a
// block, forward with tap, cross-entropy on the clean logits, gradient-free
// forward on the augmented batch, combine, backpropagate, update.
template <typename T>
StepRecord<T> train_step(Model<T>& model, AdamW<T>& opt,
                         const std::vector<const float*>& images,
                         const std::vector<int>& labels,
                         const AugmentPolicy& policy, const TrainConfig& cfg,
                         std::mt19937_64& augment_rng,
                         std::mt19937_64& block_rng, int step) {
  const auto& bc = model.config;
  const int batch = static_cast<int>(images.size());
  if (batch == 0) throw DimensionError("train_step: empty batch");
  const bool use_agsd =
      cfg.variant == Variant::kAgsdOnly || cfg.variant == Variant::kRrld;
  const bool use_ibsd =
      cfg.variant == Variant::kIbsdOnly || cfg.variant == Variant::kRrld;
  const bool use_augment = use_agsd || cfg.variant == Variant::kErmAa;

  // optional baseline flip/shift applied to x itself, ahead of everything
  std::vector<Image> base_images;
  std::vector<const float*> base_ptrs = images;
  if (cfg.base_augment) {
    base_images.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      Image src(bc.in_channels, bc.image_size, bc.image_size);
      std::copy(images[static_cast<std::size_t>(i)],
                images[static_cast<std::size_t>(i)] + src.pix.size(),
                src.pix.begin());
      base_images.push_back(base_augment(src, augment_rng));
      base_ptrs[static_cast<std::size_t>(i)] = base_images.back().pix.data();
    }
  }

  // 1) x_a = AutoAugment(x)
  std::vector<Image> augmented;
  std::vector<const float*> aug_ptrs;
  if (use_augment) {
    augmented.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      Image src(bc.in_channels, bc.image_size, bc.image_size);
      std::copy(base_ptrs[static_cast<std::size_t>(i)],
                base_ptrs[static_cast<std::size_t>(i)] + src.pix.size(),
                src.pix.begin());
      augmented.push_back(apply(policy, src, augment_rng));
      aug_ptrs.push_back(augmented.back().pix.data());
    }
  }

  // 2) sample an intermediate block
  int tap = -1;
  if (use_ibsd) {
    if (cfg.min_tap_block >= bc.depth)
      throw ConfigError("train_step: min_tap_block leaves no eligible block");
    do {
      tap = sample_block_index(block_rng, bc.depth);
    } while (tap < cfg.min_tap_block);
  }

  Graph<T> g;
  StepRecord<T> rec;
  rec.step = step;
  rec.block_index = std::max(tap, 0);

  // 3) forward pass(es)
  const std::vector<const float*>& main_images =
      cfg.variant == Variant::kErmAa ? aug_ptrs : base_ptrs;
  auto ids = model.forward(g, model.patchify(main_images), batch, true, tap);

  int agsd_node = -1, frozen_aug = -1;
  std::vector<int> live_aug_param_nodes;
  if (use_agsd) {
    MatX<T> aug_patches = model.patchify(aug_ptrs);
    switch (cfg.stop_grad) {
      case StopGradMode::kNoGrad: {
        auto aug_ids = model.forward(g, aug_patches, batch, false);
        frozen_aug = aug_ids.final_logits;
        break;
      }
      case StopGradMode::kFrozen: {
        auto aug_ids = model.forward(g, aug_patches, batch, true);
        frozen_aug = g.detach(aug_ids.final_logits);
        break;
      }
      case StopGradMode::kLive: {
        auto aug_ids = model.forward(g, aug_patches, batch, true);
        frozen_aug = aug_ids.final_logits;
        live_aug_param_nodes = aug_ids.param_nodes;
        break;
      }
    }
    if (cfg.stop_grad != StopGradMode::kLive && g.requires_grad(frozen_aug))
      throw ContractViolation(
          "train_step: augmented logits carry a live gradient path");
    agsd_node = g.kl_temperature(ids.final_logits, frozen_aug,
                                 static_cast<T>(cfg.loss.t2));
  }

  // 4) loss assembly
  int ce_node = g.cross_entropy(ids.final_logits, labels);
  int ibsd_node = -1;
  if (use_ibsd) {
    int teacher = cfg.loss.detach_ibsd_teacher ? g.detach(ids.final_logits)
                                               : ids.final_logits;
    ibsd_node = g.kl_temperature(teacher, ids.tapped_logits,
                                 static_cast<T>(cfg.loss.t1));
  }
  std::vector<int> terms = {ce_node};
  std::vector<T> coeffs = {T(1)};
  if (ibsd_node >= 0) {
    terms.push_back(ibsd_node);
    coeffs.push_back(static_cast<T>(cfg.loss.lambda));
  }
  if (agsd_node >= 0) {
    terms.push_back(agsd_node);
    coeffs.push_back(static_cast<T>(cfg.loss.gamma));
  }
  int total = g.weighted_sum(terms, coeffs);

  rec.loss.ce = g.value(ce_node)(0, 0);
  rec.loss.ibsd = ibsd_node >= 0 ? g.value(ibsd_node)(0, 0) : T(0);
  rec.loss.agsd = agsd_node >= 0 ? g.value(agsd_node)(0, 0) : T(0);
  rec.loss.total = g.value(total)(0, 0);
  for (T v : {rec.loss.ce, rec.loss.ibsd, rec.loss.agsd})
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("train_step: non-finite loss component at step " +
                         std::to_string(step));
  if (cfg.log_logits) {
    rec.final_logits = g.value(ids.final_logits);
    if (ibsd_node >= 0) rec.tapped_logits = g.value(ids.tapped_logits);
    if (agsd_node >= 0) rec.augmented_logits = g.value(frozen_aug);
    rec.labels = labels;
  }

  // 5) backward and update
  g.backward(total);
  std::vector<MatX<T>> grads(model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& gg = g.grad(ids.param_nodes[i]);
    grads[i] = gg.size() ? gg
                         : MatX<T>::Zero(model.params[i].second.rows(),
                                         model.params[i].second.cols());
    if (!live_aug_param_nodes.empty()) {
      // live mode: the second forward owns separate leaves for the same
      // parameters, so its contribution must be summed in explicitly
      const auto& ag = g.grad(live_aug_param_nodes[i]);
      if (ag.size()) grads[i] += ag;
    }
    if (!grads[i].allFinite()) {
      std::ostringstream msg;
      msg << "train_step: non-finite gradient for " << model.params[i].first
          << " at step " << step << " (grad norm " << grads[i].norm() << ")";
      throw NumericError(msg.str());
    }
  }
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& gg : grads) sq += static_cast<double>(gg.squaredNorm());
    double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip)
      for (auto& gg : grads) gg *= static_cast<T>(cfg.grad_clip / norm);
  }
  opt.step(model, grads, cfg.learning_rate, cfg.weight_decay);
  return rec;
}

// Fraction of samples whose argmax logit matches the label.
template <typename T>
double evaluate(const Model<T>& model, const TrackedView& view,
                const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValueError("evaluate: empty sample set");
  const int chunk = 64;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size();
       start += static_cast<std::size_t>(chunk)) {
    std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const float*> imgs;
    std::vector<int> labels;
    for (std::size_t i = start; i < end; ++i) {
      const Sample& s = view.at(indices[i]);
      imgs.push_back(s.image.pix.data());
      labels.push_back(s.label);
    }
    MatX<T> logits = model.logits(imgs);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index amax = 0;
      logits.row(r).maxCoeff(&amax);
      if (static_cast<int>(amax) == labels[static_cast<std::size_t>(r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

struct SeedResult {
  std::uint64_t seed = 0;
  int best_step = 0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::string checkpoint_path;
};

// Trains one leave-one-domain-out run: periodic unified-validation accuracy,
// best-checkpoint selection (earliest on ties), one final test evaluation.
// The target domain is provably untouched before that evaluation.
template <typename T>
SeedResult fit(const MultiDomainDataset& dataset, const ProtocolSplit& split,
               const BackboneConfig& backbone, const TrainConfig& cfg,
               const AugmentPolicy& policy, std::uint64_t seed,
               std::ostream* metrics = nullptr,
               const std::string& checkpoint_path = "") {
  cfg.validate();
  AccessLog log;
  TrackedView view(dataset, &log);

  BackboneConfig bc = backbone;
  bc.num_classes = dataset.num_classes();
  bc.seed = derive_seed(seed, "backbone-init");
  Model<T> model = Model<T>::init(bc);
  AdamW<T> opt(model);
  std::mt19937_64 augment_rng(derive_seed(seed, "augment"));
  std::mt19937_64 block_rng(derive_seed(seed, "block-sample"));

  const int steps_per_epoch = std::max<int>(
      1, static_cast<int>((split.train.size() +
                           static_cast<std::size_t>(cfg.batch_size) - 1) /
                          static_cast<std::size_t>(cfg.batch_size)));
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

  std::vector<std::pair<std::string, MatX<T>>> best_params = model.params;
  double best_val = -1.0;
  int best_step = 0;

  auto emit = [metrics](const nlohmann::json& j) {
    if (metrics) *metrics << j.dump() << "\n";
  };

  int step = 0, epoch = 0;
  while (step < cfg.max_steps) {
    auto epoch_batches = batches(split.train, cfg.batch_size,
                                 derive_seed(seed, "epoch", static_cast<std::uint64_t>(epoch)));
    ++epoch;
    for (const auto& batch_idx : epoch_batches) {
      if (step >= cfg.max_steps) break;
      std::vector<const float*> imgs;
      std::vector<int> labels;
      for (auto i : batch_idx) {
        const Sample& s = view.at(i);
        imgs.push_back(s.image.pix.data());
        labels.push_back(s.label);
      }
      auto rec = train_step(model, opt, imgs, labels, policy, cfg, augment_rng,
                            block_rng, step);
      ++step;
      nlohmann::json j = {{"type", "step"},
                          {"step", rec.step},
                          {"ce", static_cast<double>(rec.loss.ce)},
                          {"ibsd", static_cast<double>(rec.loss.ibsd)},
                          {"agsd", static_cast<double>(rec.loss.agsd)},
                          {"total", static_cast<double>(rec.loss.total)},
                          {"block_index", rec.block_index}};
      if (cfg.log_logits) {
        auto dump = [](const MatX<T>& m) {
          std::vector<std::vector<double>> out;
          for (Eigen::Index r = 0; r < m.rows(); ++r) {
            std::vector<double> row;
            for (Eigen::Index c = 0; c < m.cols(); ++c)
              row.push_back(static_cast<double>(m(r, c)));
            out.push_back(std::move(row));
          }
          return out;
        };
        j["labels"] = rec.labels;
        j["final_logits"] = dump(rec.final_logits);
        if (rec.tapped_logits.size()) j["tapped_logits"] = dump(rec.tapped_logits);
        if (rec.augmented_logits.size())
          j["augmented_logits"] = dump(rec.augmented_logits);
      }
      emit(j);

      if (step % eval_every == 0 || step == cfg.max_steps) {
        double val = evaluate(model, view, split.unified_val);
        emit({{"type", "eval"}, {"step", step}, {"val_acc", val}});
        if (val > best_val) {  // strict: ties keep the earliest checkpoint
          best_val = val;
          best_step = step;
          best_params = model.params;
        }
      }
    }
  }
  if (best_val < 0.0) {
    // zero-step budget: the initial model is the selected one
    best_val = evaluate(model, view, split.unified_val);
    emit({{"type", "eval"}, {"step", 0}, {"val_acc", best_val}});
  }

  model.params = best_params;
  if (log.count(split.target_domain) != 0)
    throw ContractViolation("fit: target domain '" + split.target_domain +
                            "' was read before the final evaluation");
  SeedResult out;
  out.seed = seed;
  out.best_step = best_step;
  out.best_val_accuracy = best_val;
  out.test_accuracy = evaluate(model, view, split.test);
  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, model, opt.named_state(model));
    out.checkpoint_path = checkpoint_path;
  }
  emit({{"type", "test"},
        {"step", best_step},
        {"best_val_acc", best_val},
        {"test_acc", out.test_accuracy}});
  return out;
}

struct TargetResult {
  std::string target_domain;
  std::vector<SeedResult> per_seed;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;
};

struct RunResult {
  std::vector<TargetResult> per_target;
  double average_accuracy = 0.0;  // mean of per-target means
};

inline void aggregate(TargetResult& t) {
  double mean = 0.0;
  for (const auto& r : t.per_seed) mean += r.test_accuracy;
  mean /= static_cast<double>(t.per_seed.size());
  double var = 0.0;
  if (t.per_seed.size() > 1) {
    for (const auto& r : t.per_seed) {
      double d = r.test_accuracy - mean;
      var += d * d;
    }
    var /= static_cast<double>(t.per_seed.size() - 1);
  }
  t.mean_test_accuracy = mean;
  t.std_test_accuracy = std::sqrt(var);
}

// Full leave-one-domain-out sweep: every domain as target, every seed.
// Runs are independent; with workers > 1 they execute in parallel but each
// run stays single-threaded and seed-determined, so results are identical
// to the sequential order.
template <typename T>
RunResult run_protocol(const MultiDomainDataset& dataset,
                       const BackboneConfig& backbone, const TrainConfig& cfg,
                       const AugmentPolicy& policy,
                       const std::string& out_dir = "",
                       const std::vector<std::string>& only_targets = {}) {
  cfg.validate();
  if (dataset.domains.size() < 2)
    throw ValueError("run_protocol: need at least 2 domains");
  dataset.validate();
  std::vector<std::string> targets =
      only_targets.empty() ? dataset.domains : only_targets;
  for (const auto& t : targets)
    if (!dataset.has_domain(t))
      throw ValueError("run_protocol: unknown target domain '" + t + "'");

  struct Job {
    std::size_t target_idx;
    std::size_t seed_idx;
  };
  std::vector<Job> jobs;
  RunResult result;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    TargetResult tr;
    tr.target_domain = targets[ti];
    tr.per_seed.resize(cfg.seeds.size());
    result.per_target.push_back(std::move(tr));
    for (std::size_t si = 0; si < cfg.seeds.size(); ++si) jobs.push_back({ti, si});
  }

  auto run_job = [&](const Job& job) {
    const std::string& target = targets[job.target_idx];
    std::uint64_t seed = cfg.seeds[job.seed_idx];
    auto split = build_protocol(dataset, target, derive_seed(seed, "split"));
    std::ofstream metrics;
    std::string ckpt;
    if (!out_dir.empty()) {
      std::string stem = out_dir + "/run_" + target + "_seed" + std::to_string(seed);
      metrics.open(stem + ".jsonl");
      if (!metrics) throw IoError("run_protocol: cannot write " + stem + ".jsonl");
      ckpt = stem + ".ckpt";
    }
    result.per_target[job.target_idx].per_seed[job.seed_idx] =
        fit<T>(dataset, split, backbone, cfg, policy, seed,
               out_dir.empty() ? nullptr : &metrics, ckpt);
  };

  if (cfg.workers <= 1) {
    for (const auto& job : jobs) run_job(job);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.workers));
    for (int w = 0; w < cfg.workers; ++w) {
      pool.emplace_back([&, w] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= jobs.size()) return;
          try {
            run_job(jobs[i]);
          } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (auto& t : result.per_target) aggregate(t);
  for (const auto& t : result.per_target)
    result.average_accuracy += t.mean_test_accuracy;
  result.average_accuracy /= static_cast<double>(result.per_target.size());
  return result;
}

}  // namespace rrld
