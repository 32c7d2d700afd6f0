// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth, corrupt, train, eval, report, selftest.
// Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rrld/data_io.hpp"
#include "rrld/manifest.hpp"
#include "rrld/report.hpp"
#include "rrld/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Relative output paths are rooted at $RRLD_OUTPUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("RRLD_OUTPUT_ROOT");
  if (!root || !*root || path.empty() || fs::path(path).is_absolute())
    return path;
  return (fs::path(root) / path).string();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoull(tok));
  }
  if (out.empty()) throw rrld::ConfigError("seed list is empty");
  return out;
}

std::vector<std::string> parse_name_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const rrld::SynthConfig& cfg, const std::string& out) {
  auto ds = rrld::generate_synthetic(cfg);
  fs::create_directories(out);
  rrld::save_image_folder(ds, out);
  json manifest = {{"schema_version", rrld::kSchemaVersion},
                   {"toolkit_version", rrld::kToolkitVersion},
                   {"kind", "synth"},
                   {"classes", cfg.classes},
                   {"domains", cfg.domains},
                   {"per_domain", cfg.per_domain},
                   {"image_size", cfg.image_size},
                   {"seed", cfg.seed}};
  std::ofstream f(fs::path(out) / "dataset.json");
  if (!f) throw rrld::IoError("synth: cannot write dataset.json under " + out);
  f << manifest.dump(2) << "\n";
  std::cout << "wrote " << ds.samples.size() << " images to " << out << "\n";
  return 0;
}

// ---- corrupt --------------------------------------------------------------

int cmd_corrupt(const std::string& data, const std::string& out,
                const std::vector<rrld::NoiseSpec>& specs, std::uint64_t seed,
                int image_size) {
  auto clean = rrld::load_image_folder(data, image_size);
  auto mixed = rrld::corrupt(clean, specs, seed);
  fs::create_directories(out);
  rrld::save_image_folder(mixed, out);
  json manifest = {{"schema_version", rrld::kSchemaVersion},
                   {"toolkit_version", rrld::kToolkitVersion},
                   {"kind", "corrupt"},
                   {"source", data},
                   {"seed", seed},
                   {"image_size", image_size},
                   {"noise_specs", specs}};
  std::ofstream f(fs::path(out) / "dataset.json");
  if (!f) throw rrld::IoError("corrupt: cannot write dataset.json under " + out);
  f << manifest.dump(2) << "\n";
  std::cout << "wrote " << mixed.samples.size() << " images ("
            << clean.samples.size() << " clean + noisy copies) to " << out << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

json run_result_to_json(const std::string& variant, const rrld::RunResult& r) {
  json targets = json::array();
  for (const auto& t : r.per_target) {
    json seeds = json::array();
    for (const auto& s : t.per_seed)
      seeds.push_back({{"seed", s.seed},
                       {"best_step", s.best_step},
                       {"best_val_acc", s.best_val_accuracy},
                       {"test_acc", s.test_accuracy}});
    targets.push_back({{"domain", t.target_domain},
                       {"mean", t.mean_test_accuracy},
                       {"std", t.std_test_accuracy},
                       {"seeds", seeds}});
  }
  return {{"schema_version", rrld::kSchemaVersion},
          {"variant", variant},
          {"targets", targets},
          {"average", r.average_accuracy}};
}

std::pair<std::string, rrld::RunResult> run_result_from_json(const json& j) {
  rrld::RunResult r;
  for (const auto& tj : j.at("targets")) {
    rrld::TargetResult t;
    t.target_domain = tj.at("domain").get<std::string>();
    t.mean_test_accuracy = tj.at("mean").get<double>();
    t.std_test_accuracy = tj.at("std").get<double>();
    for (const auto& sj : tj.at("seeds")) {
      rrld::SeedResult s;
      s.seed = sj.at("seed").get<std::uint64_t>();
      s.best_step = sj.at("best_step").get<int>();
      s.best_val_accuracy = sj.at("best_val_acc").get<double>();
      s.test_accuracy = sj.at("test_acc").get<double>();
      t.per_seed.push_back(s);
    }
    r.per_target.push_back(std::move(t));
  }
  r.average_accuracy = j.at("average").get<double>();
  return {j.at("variant").get<std::string>(), r};
}

int cmd_train(const rrld::RunManifest& m) {
  auto ds = rrld::load_image_folder(m.dataset_path, m.backbone.image_size,
                                    m.backbone.in_channels);
  auto policy = rrld::parse_policy(m.policy_text);
  fs::create_directories(m.output_dir);
  rrld::save_manifest((fs::path(m.output_dir) / "manifest.json").string(), m);

  rrld::RunResult result;
  if (m.train.precision == "float64")
    result = rrld::run_protocol<double>(ds, m.backbone, m.train, policy,
                                        m.output_dir, m.targets);
  else
    result = rrld::run_protocol<float>(ds, m.backbone, m.train, policy,
                                       m.output_dir, m.targets);

  std::string variant = rrld::variant_name(m.train.variant);
  std::ofstream rf(fs::path(m.output_dir) / "result.json");
  if (!rf) throw rrld::IoError("train: cannot write result.json");
  rf << run_result_to_json(variant, result).dump(2) << "\n";

  auto table = rrld::build_report({{variant, result}});
  std::cout << rrld::render_report(table);
  return 0;
}

// ---- eval -----------------------------------------------------------------

template <typename T>
int eval_impl(const std::string& ckpt, const std::string& data) {
  auto model = rrld::load_checkpoint<T>(ckpt);
  auto ds = rrld::load_image_folder(data, model.config.image_size,
                                    model.config.in_channels);
  rrld::TrackedView view(ds, nullptr);
  json out;
  double total = 0.0;
  for (const auto& domain : ds.domains) {
    double acc = rrld::evaluate(model, view, ds.domain_indices(domain));
    out[domain] = acc;
    total += acc;
  }
  out["average"] = total / static_cast<double>(ds.domains.size());
  std::cout << out.dump(2) << "\n";
  return 0;
}

// ---- report ---------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out) {
  std::vector<std::pair<std::string, rrld::RunResult>> runs;
  for (const auto& dir : run_dirs) {
    fs::path p = fs::path(dir) / "result.json";
    std::ifstream f(p);
    if (!f) throw rrld::IoError("report: cannot open " + p.string());
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw rrld::ParseError("report: " + p.string() + ": " + e.what());
    }
    runs.push_back(run_result_from_json(j));
  }
  auto table = rrld::build_report(runs);
  std::string text = rrld::render_report(table);
  std::cout << text;
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream jf(fs::path(out) / "report.json");
    std::ofstream tf(fs::path(out) / "report.txt");
    if (!jf || !tf) throw rrld::IoError("report: cannot write under " + out);
    jf << json(table).dump(2) << "\n";
    tf << text;
  }
  return 0;
}

// ---- selftest -------------------------------------------------------------

bool check_line(const std::string& name, bool ok, const std::string& detail = "") {
  std::cout << (ok ? "[ ok ] " : "[FAIL] ") << name;
  if (!ok && !detail.empty()) std::cout << " (" << detail << ")";
  std::cout << "\n";
  return ok;
}

bool selftest_losses() {
  using std::vector;
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    int c = 2 + static_cast<int>(rrld::uniform_index(rng, 15));
    int batch = 1 + static_cast<int>(rrld::uniform_index(rng, 6));
    vector<vector<double>> a, b, onehot;
    for (int r = 0; r < batch; ++r) {
      vector<double> ra, rb, y(static_cast<std::size_t>(c), 0.0);
      for (int j = 0; j < c; ++j) {
        ra.push_back(rrld::uniform_real(rng) * 8 - 4);
        rb.push_back(rrld::uniform_real(rng) * 8 - 4);
      }
      y[rrld::uniform_index(rng, static_cast<std::uint64_t>(c))] = 1.0;
      a.push_back(ra);
      b.push_back(rb);
      onehot.push_back(y);
    }
    double t1 = 0.5 + rrld::uniform_real(rng) * 8;
    // naive direct-summation oracle
    auto naive_sm = [](const vector<double>& l, double t) {
      vector<double> e;
      double s = 0;
      for (double v : l) {
        e.push_back(std::exp(v / t));
        s += e.back();
      }
      for (double& v : e) v /= s;
      return e;
    };
    double oracle = 0, oracle_ce = 0;
    vector<vector<double>> probs;
    for (int r = 0; r < batch; ++r) {
      auto p = naive_sm(a[static_cast<std::size_t>(r)], t1);
      auto q = naive_sm(b[static_cast<std::size_t>(r)], t1);
      for (int j = 0; j < c; ++j)
        oracle += p[static_cast<std::size_t>(j)] *
                  std::log(p[static_cast<std::size_t>(j)] /
                           q[static_cast<std::size_t>(j)]);
      auto p1 = naive_sm(a[static_cast<std::size_t>(r)], 1.0);
      for (int j = 0; j < c; ++j)
        if (onehot[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] == 1.0)
          oracle_ce -= std::log(p1[static_cast<std::size_t>(j)]);
      probs.push_back(p1);
    }
    oracle /= batch;
    oracle_ce /= batch;
    worst = std::max(worst, std::fabs(rrld::ibsd_loss(a, b, t1) - oracle));
    worst = std::max(worst, std::fabs(rrld::agsd_loss(a, b, t1) - oracle));
    worst = std::max(worst, std::fabs(rrld::cross_entropy(onehot, probs) - oracle_ce));
  }
  bool ok = worst < 1e-9;
  // fixed hand values
  vector<double> two = {1.0, 0.0}, swapped = {0.0, 1.0};
  double kl1 = rrld::kl_div(rrld::softmax_temp(two, 1.0),
                            rrld::softmax_temp(swapped, 1.0));
  double kl5 = rrld::kl_div(rrld::softmax_temp(two, 5.0),
                            rrld::softmax_temp(swapped, 5.0));
  ok = ok && std::fabs(kl1 - 0.46212) < 1e-4;
  ok = ok && std::fabs(kl5 - 0.01993) < 1e-4;
  ok = ok && std::fabs(rrld::cross_entropy<double>({{1.0, 0.0}}, {{0.5, 0.5}}) -
                       std::log(2.0)) < 1e-9;
  auto t = rrld::total_loss(1.0, 0.5, 0.25, rrld::LossConfig{});
  ok = ok && t.total == 1.35;
  return check_line("loss oracle suite", ok);
}

// Loss value for fixed parameter values; the augmented-path logits are pinned
// to the supplied matrix, matching the stop-gradient objective.
double selftest_loss_value(const rrld::Model<double>& model,
                           const rrld::Matd& patches,
                           const std::vector<int>& labels, int batch, int tap,
                           const rrld::Matd* frozen_aug,
                           const rrld::LossConfig& lc, bool use_ibsd) {
  rrld::Graph<double> g;
  auto ids = model.forward(g, patches, batch, false, use_ibsd ? tap : -1);
  std::vector<int> terms = {g.cross_entropy(ids.final_logits, labels)};
  std::vector<double> coeffs = {1.0};
  if (use_ibsd) {
    terms.push_back(g.kl_temperature(ids.final_logits, ids.tapped_logits, lc.t1));
    coeffs.push_back(lc.lambda);
  }
  if (frozen_aug) {
    int aug = g.input(*frozen_aug, false);
    terms.push_back(g.kl_temperature(ids.final_logits, aug, lc.t2));
    coeffs.push_back(lc.gamma);
  }
  return g.value(g.weighted_sum(terms, coeffs))(0, 0);
}

bool selftest_gradcheck() {
  rrld::BackboneConfig bc;
  bc.image_size = 8;
  bc.patch_size = 4;
  bc.embed_dim = 8;
  bc.depth = 2;
  bc.heads = 2;
  bc.num_classes = 3;
  bc.seed = 3;
  auto model = rrld::Model<double>::init(bc);
  const int batch = 2;
  std::mt19937_64 rng(7);
  std::vector<float> pixels(static_cast<std::size_t>(batch) * 3 * 8 * 8);
  for (auto& p : pixels) p = static_cast<float>(rrld::uniform_real(rng));
  std::vector<const float*> imgs = {pixels.data(), pixels.data() + 3 * 8 * 8};
  std::vector<int> labels = {0, 2};
  rrld::Matd patches = model.patchify(imgs);
  // a shifted copy stands in for the augmented batch
  std::vector<float> aug_pixels = pixels;
  for (auto& p : aug_pixels) p = 1.0f - p;
  std::vector<const float*> aug_imgs = {aug_pixels.data(),
                                        aug_pixels.data() + 3 * 8 * 8};
  rrld::Matd aug_patches = model.patchify(aug_imgs);
  rrld::LossConfig lc;

  bool all_ok = true;
  for (auto variant : {rrld::Variant::kErm, rrld::Variant::kIbsdOnly,
                       rrld::Variant::kAgsdOnly, rrld::Variant::kRrld}) {
    bool use_ibsd = variant == rrld::Variant::kIbsdOnly ||
                    variant == rrld::Variant::kRrld;
    bool use_agsd = variant == rrld::Variant::kAgsdOnly ||
                    variant == rrld::Variant::kRrld;
    int tap = 1;
    // augmented logits at the base parameters, held constant under FD
    rrld::Matd frozen;
    if (use_agsd) {
      rrld::Graph<double> g0;
      auto aug_ids = model.forward(g0, aug_patches, batch, false);
      frozen = g0.value(aug_ids.final_logits);
    }
    const rrld::Matd* fz = use_agsd ? &frozen : nullptr;

    rrld::Graph<double> g;
    auto ids = model.forward(g, patches, batch, true, use_ibsd ? tap : -1);
    std::vector<int> terms = {g.cross_entropy(ids.final_logits, labels)};
    std::vector<double> coeffs = {1.0};
    if (use_ibsd) {
      terms.push_back(g.kl_temperature(ids.final_logits, ids.tapped_logits, lc.t1));
      coeffs.push_back(lc.lambda);
    }
    if (use_agsd) {
      int aug = g.input(frozen, false);
      terms.push_back(g.kl_temperature(ids.final_logits, aug, lc.t2));
      coeffs.push_back(lc.gamma);
    }
    g.backward(g.weighted_sum(terms, coeffs));

    double h = 1e-5, worst = 0.0;
    auto probe = rrld::Model<double>(model);
    for (std::size_t pi = 0; pi < model.params.size(); ++pi) {
      const auto& gmat = g.grad(ids.param_nodes[pi]);
      auto& pv = probe.params[pi].second;
      // probe a few entries per tensor, always including the extremes
      std::vector<Eigen::Index> picks = {0, pv.size() - 1};
      std::mt19937_64 prng(rrld::derive_seed(13, probe.params[pi].first, pi));
      for (int k = 0; k < 3; ++k)
        picks.push_back(static_cast<Eigen::Index>(
            rrld::uniform_index(prng, static_cast<std::uint64_t>(pv.size()))));
      for (Eigen::Index e : picks) {
        double saved = pv.data()[e];
        pv.data()[e] = saved + h;
        double up = selftest_loss_value(probe, patches, labels, batch, tap, fz,
                                        lc, use_ibsd);
        pv.data()[e] = saved - h;
        double dn = selftest_loss_value(probe, patches, labels, batch, tap, fz,
                                        lc, use_ibsd);
        pv.data()[e] = saved;
        double fd = (up - dn) / (2 * h);
        double an = gmat.size() ? gmat.data()[e] : 0.0;
        double rel = std::fabs(fd - an) / std::max(1e-6, std::fabs(fd));
        worst = std::max(worst, rel);
      }
    }
    bool ok = worst < 1e-4;
    all_ok &= check_line("gradient check " + rrld::variant_name(variant), ok,
                         "max rel err " + std::to_string(worst));
  }
  return all_ok;
}

bool selftest_stopgrad(bool inject_break) {
  auto run = [&](rrld::StopGradMode mode) {
    rrld::SynthConfig sc;
    sc.classes = 3;
    sc.domains = 2;
    sc.per_domain = 16;
    sc.image_size = 16;
    sc.seed = 5;
    auto ds = rrld::generate_synthetic(sc);
    rrld::BackboneConfig bc;
    bc.image_size = 16;
    bc.embed_dim = 16;
    bc.depth = 2;
    bc.heads = 2;
    bc.num_classes = 3;
    bc.seed = 17;
    auto model = rrld::Model<double>::init(bc);
    rrld::AdamW<double> opt(model);
    rrld::TrainConfig cfg;
    cfg.variant = rrld::Variant::kRrld;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.stop_grad = mode;
    auto policy = rrld::default_policy();
    std::mt19937_64 arng(1), brng(2);
    for (int step = 0; step < 10; ++step) {
      std::vector<const float*> imgs;
      std::vector<int> labels;
      for (int i = 0; i < 8; ++i) {
        auto& s = ds.samples[static_cast<std::size_t>((step * 8 + i) % ds.samples.size())];
        imgs.push_back(s.image.pix.data());
        labels.push_back(s.label);
      }
      rrld::train_step(model, opt, imgs, labels, policy, cfg, arng, brng, step);
    }
    return model;
  };
  auto a = run(rrld::StopGradMode::kNoGrad);
  auto b = run(inject_break ? rrld::StopGradMode::kLive
                            : rrld::StopGradMode::kFrozen);
  bool identical = true;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (!(a.params[i].second == b.params[i].second)) identical = false;
  return check_line("stop-gradient trajectory equality", identical,
                    "10-step parameter trajectories diverge");
}

bool selftest_noleak() {
  rrld::SynthConfig sc;
  sc.classes = 3;
  sc.domains = 3;
  sc.per_domain = 20;
  sc.image_size = 16;
  sc.seed = 9;
  auto ds = rrld::generate_synthetic(sc);
  rrld::BackboneConfig bc;
  bc.image_size = 16;
  bc.embed_dim = 16;
  bc.depth = 2;
  bc.heads = 2;
  bc.seed = 1;
  rrld::TrainConfig cfg;
  cfg.variant = rrld::Variant::kErm;
  cfg.max_steps = 4;
  cfg.batch_size = 8;
  cfg.seeds = {1};
  bool ok = true;
  std::string detail;
  try {
    for (const auto& target : ds.domains) {
      auto split = rrld::build_protocol(ds, target, 3);
      // disjointness of the three partitions
      std::set<std::size_t> seen;
      for (const auto* part : {&split.train, &split.unified_val, &split.test})
        for (auto i : *part)
          if (!seen.insert(i).second) throw rrld::ContractViolation("overlap");
      for (auto i : split.train)
        if (ds.samples[i].domain == target)
          throw rrld::ContractViolation("target in train");
      rrld::fit<float>(ds, split, bc, cfg, rrld::default_policy(), 1);
    }
  } catch (const std::exception& e) {
    ok = false;
    detail = e.what();
  }
  return check_line("protocol no-leak check", ok, detail);
}

int cmd_selftest(const std::string& break_flag, bool /*use_float64*/) {
  bool ok = true;
  ok &= selftest_losses();
  ok &= selftest_gradcheck();
  ok &= selftest_stopgrad(break_flag == "stopgrad");
  ok &= selftest_noleak();
  std::cout << (ok ? "selftest: all checks passed\n"
                   : "selftest: FAILURES detected\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RRLD toolkit: self-distillation training for domain generalization"};
  app.require_subcommand(1);

  // synth
  rrld::SynthConfig synth_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-domain dataset");
  synth->add_option("--classes", synth_cfg.classes, "Glyph classes (2-8)")->capture_default_str();
  synth->add_option("--domains", synth_cfg.domains, "Style domains (>= 2)")->capture_default_str();
  synth->add_option("--per-domain", synth_cfg.per_domain, "Images per domain")->capture_default_str();
  synth->add_option("--image-size", synth_cfg.image_size, "Square image size")->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output dataset directory")->required();

  // corrupt
  std::string cor_data, cor_out, cor_kinds = "gaussian,impulse,speckle,shot";
  std::uint64_t cor_seed = 0;
  int cor_image_size = 32;
  double cor_sigma = -1, cor_prob = -1, cor_speckle = -1, cor_shot = -1;
  auto* cor = app.add_subcommand("corrupt", "Add noise-corrupted twin domains");
  cor->add_option("--data", cor_data, "Source dataset directory")->required();
  cor->add_option("--out", cor_out, "Output dataset directory")->required();
  cor->add_option("--kinds", cor_kinds, "Comma list of gaussian,impulse,speckle,shot")->capture_default_str();
  cor->add_option("--seed", cor_seed, "Corruption seed")->capture_default_str();
  cor->add_option("--image-size", cor_image_size, "Square image size")->capture_default_str();
  cor->add_option("--sigma", cor_sigma, "Gaussian noise sigma (default 0.1)");
  cor->add_option("--prob", cor_prob, "Impulse flip probability (default 0.05)");
  cor->add_option("--speckle-sigma", cor_speckle, "Speckle sigma (default 0.2)");
  cor->add_option("--shot-scale", cor_shot, "Shot photon scale (default 60)");

  // train
  std::string tr_data, tr_out, tr_variant = "RRLD", tr_seeds = "1,2,3";
  std::string tr_targets, tr_policy_file, tr_manifest, tr_precision = "float32";
  rrld::TrainConfig tr_cfg;
  rrld::BackboneConfig tr_bc;
  bool tr_log_logits = false;
  auto* tr = app.add_subcommand("train", "Run the leave-one-domain-out protocol");
  tr->add_option("--data", tr_data, "Dataset directory (image-folder layout)");
  tr->add_option("--out", tr_out, "Run output directory");
  tr->add_option("--manifest", tr_manifest, "Rerun from a saved run manifest");
  tr->add_option("--variant", tr_variant, "ERM | ERM_AA | IBSD_only | AGSD_only | RRLD")->capture_default_str();
  tr->add_option("--seeds", tr_seeds, "Comma list of seeds")->capture_default_str();
  tr->add_option("--steps", tr_cfg.max_steps, "Optimization steps per run")->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size, "Batch size")->capture_default_str();
  tr->add_option("--lr", tr_cfg.learning_rate, "Learning rate")->capture_default_str();
  tr->add_option("--wd", tr_cfg.weight_decay, "Weight decay")->capture_default_str();
  tr->add_option("--lambda", tr_cfg.loss.lambda, "Intermediate-block loss weight")->capture_default_str();
  tr->add_option("--t1", tr_cfg.loss.t1, "Intermediate-block temperature")->capture_default_str();
  tr->add_option("--gamma", tr_cfg.loss.gamma, "Augmentation loss weight")->capture_default_str();
  tr->add_option("--t2", tr_cfg.loss.t2, "Augmentation temperature")->capture_default_str();
  tr->add_option("--eval-every", tr_cfg.eval_every, "Validation interval in steps (0 = per epoch)")->capture_default_str();
  tr->add_option("--grad-clip", tr_cfg.grad_clip, "Global gradient-norm clip (0 = off)")->capture_default_str();
  tr->add_option("--precision", tr_precision, "float32 | float64")->capture_default_str();
  tr->add_option("--targets", tr_targets, "Comma list of target domains (default all)");
  tr->add_option("--workers", tr_cfg.workers, "Parallel (target, seed) runs")->capture_default_str();
  tr->add_option("--policy", tr_policy_file, "Augmentation policy file (default built-in)");
  tr->add_flag("--log-logits", tr_log_logits, "Log per-step logits in the metrics stream");
  tr->add_flag("--base-augment", tr_cfg.base_augment, "Random flip/shift of x before the policy");
  tr->add_option("--image-size", tr_bc.image_size, "Square image size")->capture_default_str();
  tr->add_option("--patch-size", tr_bc.patch_size, "Patch size")->capture_default_str();
  tr->add_option("--embed-dim", tr_bc.embed_dim, "Embedding width")->capture_default_str();
  tr->add_option("--depth", tr_bc.depth, "Transformer blocks")->capture_default_str();
  tr->add_option("--heads", tr_bc.heads, "Attention heads")->capture_default_str();

  // eval
  std::string ev_ckpt, ev_data, ev_precision = "float32";
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint per domain");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--precision", ev_precision, "float32 | float64")->capture_default_str();

  // report
  std::vector<std::string> rp_runs;
  std::string rp_out;
  auto* rp = app.add_subcommand("report", "Aggregate run directories into a result table");
  rp->add_option("runs", rp_runs, "Run directories containing result.json")->required();
  rp->add_option("--out", rp_out, "Directory for report.json and report.txt");

  // selftest
  std::string st_break;
  bool st_float64 = false;
  auto* st = app.add_subcommand("selftest", "Run built-in correctness checks");
  st->add_option("--break", st_break, "Inject a known bug (stopgrad) as a negative control");
  st->add_flag("--float64", st_float64, "Run checks in double precision");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(synth_cfg, resolve_out(synth_out));
    if (*cor) {
      std::vector<rrld::NoiseSpec> specs;
      for (const auto& name : parse_name_list(cor_kinds)) {
        rrld::NoiseSpec s;
        s.kind = rrld::parse_noise_kind(name);
        s.param = rrld::default_noise_param(s.kind);
        s.seed = cor_seed;
        switch (s.kind) {
          case rrld::NoiseKind::kGaussian:
            if (cor_sigma >= 0) s.param = cor_sigma;
            break;
          case rrld::NoiseKind::kImpulse:
            if (cor_prob >= 0) s.param = cor_prob;
            break;
          case rrld::NoiseKind::kSpeckle:
            if (cor_speckle >= 0) s.param = cor_speckle;
            break;
          case rrld::NoiseKind::kShot:
            if (cor_shot >= 0) s.param = cor_shot;
            break;
        }
        specs.push_back(s);
      }
      return cmd_corrupt(cor_data, resolve_out(cor_out), specs, cor_seed,
                         cor_image_size);
    }
    if (*tr) {
      rrld::RunManifest m;
      if (!tr_manifest.empty()) {
        m = rrld::load_manifest(tr_manifest);
        if (!tr_out.empty()) m.output_dir = resolve_out(tr_out);
        if (!tr_data.empty()) m.dataset_path = tr_data;
      } else {
        if (tr_data.empty() || tr_out.empty())
          throw rrld::ConfigError("train: --data and --out are required unless --manifest is given");
        m.backbone = tr_bc;
        m.train = tr_cfg;
        m.train.variant = rrld::parse_variant(tr_variant);
        m.train.seeds = parse_seed_list(tr_seeds);
        m.train.precision = tr_precision;
        m.train.log_logits = tr_log_logits;
        m.targets = parse_name_list(tr_targets);
        m.policy_text = tr_policy_file.empty()
                            ? rrld::serialize_policy(rrld::default_policy())
                            : [&] {
                                std::ifstream pf(tr_policy_file);
                                if (!pf) throw rrld::IoError("train: cannot open policy file " + tr_policy_file);
                                std::stringstream ss;
                                ss << pf.rdbuf();
                                return ss.str();
                              }();
        rrld::parse_policy(m.policy_text);  // fail fast on a bad policy
        m.dataset_path = tr_data;
        m.output_dir = resolve_out(tr_out);
      }
      m.train.validate();
      m.backbone.validate();
      return cmd_train(m);
    }
    if (*ev) {
      if (ev_precision == "float64") return eval_impl<double>(ev_ckpt, ev_data);
      if (ev_precision == "float32") return eval_impl<float>(ev_ckpt, ev_data);
      throw rrld::ConfigError("eval: precision must be float32 or float64");
    }
    if (*rp) return cmd_report(rp_runs, resolve_out(rp_out));
    if (*st) return cmd_selftest(st_break, st_float64);
  } catch (const rrld::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const rrld::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const rrld::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
