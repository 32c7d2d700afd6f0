// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rrld/common.hpp"
#include "rrld/image.hpp"

namespace rrld {

struct MultiDomainDataset {
  std::vector<std::string> domains;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  int num_classes() const { return static_cast<int>(class_names.size()); }

  std::vector<std::size_t> domain_indices(const std::string& domain) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].domain == domain) out.push_back(i);
    return out;
  }

  bool has_domain(const std::string& domain) const {
    return std::find(domains.begin(), domains.end(), domain) != domains.end();
  }

  // Checks the shared-vocabulary invariant: every domain must contain every
  // class at least once.
  void validate() const {
    std::map<std::string, std::set<int>> seen;
    for (const auto& s : samples) seen[s.domain].insert(s.label);
    for (const auto& d : domains) {
      const auto& labels = seen[d];
      for (int c = 0; c < num_classes(); ++c)
        if (!labels.count(c))
          throw ValueError("dataset: domain '" + d + "' is missing class '" +
                           class_names[static_cast<std::size_t>(c)] + "'");
    }
  }
};

// Counts reads per domain; used to prove that the held-out target domain is
// never touched during training.
struct AccessLog {
  std::map<std::string, std::size_t> reads;
  void record(const std::string& domain) { ++reads[domain]; }
  std::size_t count(const std::string& domain) const {
    auto it = reads.find(domain);
    return it == reads.end() ? 0 : it->second;
  }
};

// Read-only dataset view that funnels every sample access through the log.
class TrackedView {
 public:
  TrackedView(const MultiDomainDataset& ds, AccessLog* log)
      : ds_(&ds), log_(log) {}

  const Sample& at(std::size_t idx) const {
    const Sample& s = ds_->samples[idx];
    if (log_) log_->record(s.domain);
    return s;
  }
  const MultiDomainDataset& dataset() const { return *ds_; }

 private:
  const MultiDomainDataset* ds_;
  AccessLog* log_;
};

// Leave-one-domain-out partition: per non-target domain a seeded shuffle and
// floor-80/20 cut, validation shards merged, target domain -> test only.
struct ProtocolSplit {
  std::string target_domain;
  std::vector<std::size_t> train;
  std::vector<std::size_t> unified_val;
  std::vector<std::size_t> test;
};

inline ProtocolSplit build_protocol(const MultiDomainDataset& dataset,
                                    const std::string& target,
                                    std::uint64_t split_seed) {
  if (!dataset.has_domain(target))
    throw ValueError("build_protocol: unknown target domain '" + target + "'");
  ProtocolSplit split;
  split.target_domain = target;
  for (const auto& domain : dataset.domains) {
    auto idx = dataset.domain_indices(domain);
    if (domain == target) {
      split.test.insert(split.test.end(), idx.begin(), idx.end());
      continue;
    }
    if (idx.size() < 5)
      throw ValueError("build_protocol: domain '" + domain +
                       "' has fewer than 5 samples");
    std::mt19937_64 rng(derive_seed(split_seed, "protocol-split/" + domain));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    std::size_t n_train =
        static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(idx.size())));
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.unified_val.insert(split.unified_val.end(),
                             idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  return split;
}

// Seeded per-epoch shuffle into batches of sample indices; the final partial
// batch is kept.
inline std::vector<std::vector<std::size_t>> batches(
    const std::vector<std::size_t>& sample_indices, int batch_size,
    std::uint64_t epoch_seed) {
  if (sample_indices.empty()) throw ValueError("batches: empty sample set");
  if (batch_size < 1) throw ValueError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order = sample_indices;
  std::mt19937_64 rng(derive_seed(epoch_seed, "epoch-shuffle"));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[uniform_index(rng, i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

template <typename T>
std::vector<std::vector<T>> one_hot(const std::vector<int>& labels, int c) {
  std::vector<std::vector<T>> out(labels.size(), std::vector<T>(static_cast<std::size_t>(c), T(0)));
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i][static_cast<std::size_t>(labels[i])] = T(1);
  return out;
}

// -- synthetic multi-domain generator ---------------------------------------
// Class identity is a geometric glyph; domain identity is rendering style
// (background texture, color palette, stroke width). The label function is
// shared across domains while the pixel statistics shift.

struct SynthConfig {
  int classes = 4;
  int domains = 3;
  int per_domain = 100;
  int image_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw ConfigError("SynthConfig: classes must be >= 2");
    if (classes > 8) throw ConfigError("SynthConfig: at most 8 glyph classes");
    if (domains < 2) throw ConfigError("SynthConfig: domains must be >= 2");
    if (per_domain < 10) throw ConfigError("SynthConfig: per_domain must be >= 10");
    if (image_size < 16) throw ConfigError("SynthConfig: image_size must be >= 16");
  }
};

namespace detail {

// Signed membership test for glyph `cls` in unit coordinates u,v in [-1,1]
// relative to the glyph center, with unit nominal radius.
inline bool glyph_hit(int cls, double u, double v, double stroke) {
  double au = std::fabs(u), av = std::fabs(v);
  switch (cls) {
    case 0:  // filled disk
      return u * u + v * v <= 1.0;
    case 1:  // square outline
      return std::max(au, av) <= 1.0 && std::max(au, av) >= 1.0 - stroke;
    case 2:  // plus
      return (au <= stroke * 0.75 && av <= 1.0) || (av <= stroke * 0.75 && au <= 1.0);
    case 3:  // filled triangle (apex up)
      return v >= -0.8 && v <= 1.0 && au <= (1.0 - (v + 0.8) / 1.8);
    case 4: {  // ring
      double r2 = u * u + v * v;
      double inner = (1.0 - stroke);
      return r2 <= 1.0 && r2 >= inner * inner;
    }
    case 5:  // filled diamond
      return au + av <= 1.0;
    case 6:  // two horizontal bars
      return au <= 1.0 && (std::fabs(v - 0.5) <= stroke * 0.6 ||
                           std::fabs(v + 0.5) <= stroke * 0.6);
    case 7:  // X cross
      return au <= 1.0 && av <= 1.0 &&
             (std::fabs(u - v) <= stroke * 0.8 || std::fabs(u + v) <= stroke * 0.8);
    default:
      return false;
  }
}

struct Rgb {
  double r, g, b;
};

inline Rgb hue_to_rgb(double h) {
  auto f = [h](double shift) {
    double k = std::fmod(h * 6.0 + shift, 6.0);
    return 1.0 - std::max(0.0, std::min({k, 4.0 - k, 1.0}));
  };
  return {f(5.0), f(3.0), f(1.0)};
}

}  // namespace detail

inline MultiDomainDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  MultiDomainDataset ds;
  for (int c = 0; c < cfg.classes; ++c)
    ds.class_names.push_back("class" + std::to_string(c));
  const double golden = 0.61803398874989484;
  std::uint64_t next_id = 0;
  for (int d = 0; d < cfg.domains; ++d) {
    std::string domain = "domain" + std::to_string(d);
    ds.domains.push_back(domain);
    // domain style: hues, background mode, stroke width
    double bg_hue = std::fmod(0.07 + d * golden, 1.0);
    double fg_hue = std::fmod(bg_hue + 0.41 + 0.13 * d, 1.0);
    int dom_mode = d % 3;  // 0 flat, 1 vertical gradient, 2 speckled texture
    double stroke = 0.30 + 0.06 * (d % 3);
    double bg_level = 0.35 + 0.08 * ((d + 1) % 3);
    double fg_level = 0.95 - 0.06 * (d % 2);

    for (int i = 0; i < cfg.per_domain; ++i) {
      int cls = i % cfg.classes;  // uniform within +-1 by construction
      std::mt19937_64 rng(derive_seed(cfg.seed, "synth/" + domain,
                                      static_cast<std::uint64_t>(i)));
      Image img(3, cfg.image_size, cfg.image_size);
      // wide hue jitter keeps the domain palettes overlapping so that shape,
      // not colour, is the only reliable class signal
      detail::Rgb bg = detail::hue_to_rgb(
          std::fmod(bg_hue + 0.30 * (uniform_real(rng) - 0.5) + 1.0, 1.0));
      detail::Rgb fg = detail::hue_to_rgb(
          std::fmod(fg_hue + 0.30 * (uniform_real(rng) - 0.5) + 1.0, 1.0));
      double bgl = bg_level * (0.85 + 0.3 * uniform_real(rng));
      double fgl = fg_level * (0.85 + 0.15 * uniform_real(rng));
      // generous pose variation inside every domain keeps geometric
      // augmentations of clean images on the training manifold
      double cx = 0.5 + 0.20 * (uniform_real(rng) - 0.5);
      double cy = 0.5 + 0.20 * (uniform_real(rng) - 0.5);
      double radius = (0.21 + 0.07 * uniform_real(rng)) * cfg.image_size;
      double theta = 0.42 * (uniform_real(rng) - 0.5);  // about +-12 degrees
      double ct = std::cos(theta), st = std::sin(theta);
      double noise_amp = 0.02 + 0.02 * (d % 2);
      // domain-biased but overlapping background texture distribution
      int bg_mode = uniform_real(rng) < 0.6
                        ? dom_mode
                        : static_cast<int>(uniform_index(rng, 3));

      for (int y = 0; y < cfg.image_size; ++y) {
        for (int x = 0; x < cfg.image_size; ++x) {
          double u0 = (x - cx * cfg.image_size) / radius;
          double v0 = (cy * cfg.image_size - y) / radius;
          double u = ct * u0 + st * v0;
          double v = ct * v0 - st * u0;
          bool hit = detail::glyph_hit(cls, u, v, stroke);
          double shade = bgl;
          if (bg_mode == 1)
            shade = bgl * (0.6 + 0.8 * y / static_cast<double>(cfg.image_size));
          else if (bg_mode == 2)
            shade = bgl * (0.7 + 0.6 * ((x / 4 + y / 4) % 2));
          detail::Rgb base = hit ? fg : bg;
          double level = hit ? fgl : shade;
          double n = noise_amp * (uniform_real(rng) - 0.5);
          img.at(0, y, x) = static_cast<float>(std::clamp(base.r * level + n, 0.0, 1.0));
          img.at(1, y, x) = static_cast<float>(std::clamp(base.g * level + n, 0.0, 1.0));
          img.at(2, y, x) = static_cast<float>(std::clamp(base.b * level + n, 0.0, 1.0));
        }
      }
      Sample s;
      s.image = std::move(img);
      s.label = cls;
      s.domain = domain;
      s.id = next_id++;
      ds.samples.push_back(std::move(s));
    }
  }
  ds.validate();
  return ds;
}

// -- noise corruption -------------------------------------------------------

enum class NoiseKind { kGaussian, kImpulse, kSpeckle, kShot };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kGaussian;
  double param = 0.1;  // gaussian/speckle sigma, impulse flip prob, shot scale
  std::uint64_t seed = 0;

  void validate() const {
    if (param < 0.0) throw ValueError("NoiseSpec: parameter must be >= 0");
    if (kind == NoiseKind::kImpulse && param > 1.0)
      throw ValueError("NoiseSpec: impulse probability must be <= 1");
    if (kind == NoiseKind::kShot && param <= 0.0)
      throw ValueError("NoiseSpec: shot scale must be > 0");
  }
};

inline NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "impulse") return NoiseKind::kImpulse;
  if (name == "speckle") return NoiseKind::kSpeckle;
  if (name == "shot") return NoiseKind::kShot;
  throw ConfigError("unknown noise kind '" + name +
                    "'; expected gaussian, impulse, speckle, or shot");
}

inline std::string noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kImpulse: return "impulse";
    case NoiseKind::kSpeckle: return "speckle";
    case NoiseKind::kShot: return "shot";
  }
  throw ValueError("unknown noise kind");
}

// Default severities; the source material leaves these unspecified.
inline double default_noise_param(NoiseKind k) {
  switch (k) {
    case NoiseKind::kGaussian: return 0.1;
    case NoiseKind::kImpulse: return 0.05;
    case NoiseKind::kSpeckle: return 0.2;
    case NoiseKind::kShot: return 60.0;
  }
  throw ValueError("unknown noise kind");
}

namespace detail {

// Knuth Poisson sampler; intensities here keep lambda small.
template <typename Rng>
int poisson(Rng& rng, double lambda) {
  if (lambda <= 0.0) return 0;
  double limit = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform_real(rng);
  } while (p > limit);
  return k - 1;
}

}  // namespace detail

template <typename Rng>
Image corrupt_image(const Image& img, const NoiseSpec& spec, Rng& rng) {
  spec.validate();
  Image out = img;
  switch (spec.kind) {
    case NoiseKind::kGaussian:
      for (float& v : out.pix)
        v += static_cast<float>(spec.param * normal(rng));
      break;
    case NoiseKind::kImpulse:
      for (float& v : out.pix) {
        double u = uniform_real(rng);
        if (u < spec.param / 2)
          v = 0.f;
        else if (u < spec.param)
          v = 1.f;
      }
      break;
    case NoiseKind::kSpeckle:
      for (float& v : out.pix)
        v *= static_cast<float>(1.0 + spec.param * normal(rng));
      break;
    case NoiseKind::kShot:
      for (float& v : out.pix)
        v = static_cast<float>(detail::poisson(rng, v * spec.param) / spec.param);
      break;
  }
  clamp01(out);
  return out;
}

// Returns original + noisy twin domains. Each sample's corruption kind is
// drawn uniformly from `specs` with a per-sample seeded stream, so results
// do not depend on iteration order.
inline MultiDomainDataset corrupt(const MultiDomainDataset& dataset,
                                  const std::vector<NoiseSpec>& specs,
                                  std::uint64_t seed) {
  if (specs.empty()) throw ValueError("corrupt: no noise specs given");
  for (const auto& s : specs) s.validate();
  MultiDomainDataset out;
  out.class_names = dataset.class_names;
  out.domains = dataset.domains;
  out.samples = dataset.samples;
  std::uint64_t next_id = 0;
  for (const auto& s : dataset.samples) next_id = std::max(next_id, s.id + 1);
  for (const auto& domain : dataset.domains)
    out.domains.push_back(domain + "_noisy");
  for (const auto& s : dataset.samples) {
    std::mt19937_64 rng(derive_seed(seed, "corrupt", s.id));
    const NoiseSpec& spec = specs[uniform_index(rng, specs.size())];
    Sample noisy;
    noisy.image = corrupt_image(s.image, spec, rng);
    noisy.label = s.label;
    noisy.domain = s.domain + "_noisy";
    noisy.id = next_id++;
    out.samples.push_back(std::move(noisy));
  }
  return out;
}

}  // namespace rrld
