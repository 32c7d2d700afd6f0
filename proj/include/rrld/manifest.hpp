// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrld/backbone.hpp"
#include "rrld/data.hpp"
#include "rrld/trainer.hpp"

namespace rrld {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolkitVersion = "0.1.0";

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"t1", c.t1},
       {"t2", c.t2},
       {"lambda", c.lambda},
       {"gamma", c.gamma},
       {"detach_ibsd_teacher", c.detach_ibsd_teacher}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  j.at("t1").get_to(c.t1);
  j.at("t2").get_to(c.t2);
  j.at("lambda").get_to(c.lambda);
  j.at("gamma").get_to(c.gamma);
  c.detach_ibsd_teacher = j.value("detach_ibsd_teacher", false);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"loss", c.loss},
       {"variant", variant_name(c.variant)},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"eval_every", c.eval_every},
       {"seeds", c.seeds},
       {"precision", c.precision},
       {"grad_clip", c.grad_clip},
       {"min_tap_block", c.min_tap_block},
       {"log_logits", c.log_logits},
       {"base_augment", c.base_augment},
       {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("loss").get_to(c.loss);
  c.variant = parse_variant(j.at("variant").get<std::string>());
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("batch_size").get_to(c.batch_size);
  j.at("max_steps").get_to(c.max_steps);
  j.at("eval_every").get_to(c.eval_every);
  j.at("seeds").get_to(c.seeds);
  j.at("precision").get_to(c.precision);
  c.grad_clip = j.value("grad_clip", 0.0);
  c.min_tap_block = j.value("min_tap_block", 1);
  c.log_logits = j.value("log_logits", false);
  c.base_augment = j.value("base_augment", false);
  c.workers = j.value("workers", 1);
}

inline void to_json(nlohmann::json& j, const NoiseSpec& s) {
  j = {{"kind", noise_kind_name(s.kind)}, {"param", s.param}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, NoiseSpec& s) {
  s.kind = parse_noise_kind(j.at("kind").get<std::string>());
  j.at("param").get_to(s.param);
  j.at("seed").get_to(s.seed);
}

// Everything needed to bit-reproduce a run. Written before training starts.
struct RunManifest {
  int schema_version = kSchemaVersion;
  std::string toolkit_version = kToolkitVersion;
  BackboneConfig backbone;
  TrainConfig train;
  std::string policy_text;  // full policy, not a reference
  std::vector<NoiseSpec> noise_specs;
  std::string dataset_path;
  std::vector<std::string> targets;  // empty = all domains
  std::string output_dir;
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = {{"schema_version", m.schema_version},
       {"toolkit_version", m.toolkit_version},
       {"backbone", m.backbone},
       {"train", m.train},
       {"policy", m.policy_text},
       {"noise_specs", m.noise_specs},
       {"dataset_path", m.dataset_path},
       {"targets", m.targets},
       {"output_dir", m.output_dir}};
}

inline void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("schema_version").get_to(m.schema_version);
  if (m.schema_version != kSchemaVersion)
    throw ParseError("manifest: unsupported schema_version");
  j.at("toolkit_version").get_to(m.toolkit_version);
  j.at("backbone").get_to(m.backbone);
  j.at("train").get_to(m.train);
  j.at("policy").get_to(m.policy_text);
  j.at("noise_specs").get_to(m.noise_specs);
  j.at("dataset_path").get_to(m.dataset_path);
  j.at("targets").get_to(m.targets);
  j.at("output_dir").get_to(m.output_dir);
}

inline void save_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream f(path);
  if (!f) throw IoError("save_manifest: cannot write " + path);
  f << nlohmann::json(m).dump(2) << "\n";
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
    return j.get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_manifest: " + std::string(e.what()));
  }
}

}  // namespace rrld
