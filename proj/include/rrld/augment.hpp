// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded stochastic augmentation engine. The built-in policy is the 25
// sub-policy ImageNet list, with the usual 10-level magnitude table:
//
//   level m in {0..9}        physical range
//   shear_x / shear_y        0 .. 0.3           (signed)
//   translate_x/translate_y  0 .. 150/331 * size px (signed)
//   rotate                   0 .. 30 deg        (signed)
//   color/contrast/
//   sharpness/brightness     factor 1 +/- m*0.1
//   posterize                8 .. 4 bits kept
//   solarize                 threshold 1.0 .. 0.11 (invert above)
//   autocontrast/equalize/invert  no magnitude
//
// Geometric ops use inverse-mapped nearest-neighbour sampling and fill
// vacated pixels with 0.5 gray. On single-channel images the color op is an
// identity and luma is the channel itself.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rrld/common.hpp"
#include "rrld/image.hpp"

namespace rrld {

enum class OpKind {
  kShearX,
  kShearY,
  kTranslateX,
  kTranslateY,
  kRotate,
  kColor,
  kPosterize,
  kSolarize,
  kContrast,
  kSharpness,
  kBrightness,
  kAutoContrast,
  kEqualize,
  kInvert,
};

inline const std::vector<std::pair<std::string, OpKind>>& op_names() {
  static const std::vector<std::pair<std::string, OpKind>> names = {
      {"shear_x", OpKind::kShearX},       {"shear_y", OpKind::kShearY},
      {"translate_x", OpKind::kTranslateX}, {"translate_y", OpKind::kTranslateY},
      {"rotate", OpKind::kRotate},        {"color", OpKind::kColor},
      {"posterize", OpKind::kPosterize},  {"solarize", OpKind::kSolarize},
      {"contrast", OpKind::kContrast},    {"sharpness", OpKind::kSharpness},
      {"brightness", OpKind::kBrightness},{"autocontrast", OpKind::kAutoContrast},
      {"equalize", OpKind::kEqualize},    {"invert", OpKind::kInvert}};
  return names;
}

inline std::string op_name(OpKind k) {
  for (const auto& [n, kk] : op_names())
    if (kk == k) return n;
  throw ValueError("op_name: unknown op kind");
}

inline bool op_is_signed(OpKind k) {
  switch (k) {
    case OpKind::kShearX:
    case OpKind::kShearY:
    case OpKind::kTranslateX:
    case OpKind::kTranslateY:
    case OpKind::kRotate:
    case OpKind::kColor:
    case OpKind::kContrast:
    case OpKind::kSharpness:
    case OpKind::kBrightness:
      return true;
    default:
      return false;
  }
}

struct AugmentOp {
  OpKind kind = OpKind::kInvert;
  double probability = 0.0;
  int magnitude = 0;  // level 0..9; ignored by magnitude-free ops

  void validate() const {
    if (probability < 0.0 || probability > 1.0)
      throw ValueError("AugmentOp: probability outside [0,1]");
    if (magnitude < 0 || magnitude > 9)
      throw ValueError("AugmentOp: magnitude level outside {0..9}");
  }
};

struct AugmentPolicy {
  std::vector<std::array<AugmentOp, 2>> sub_policies;

  void validate() const {
    if (sub_policies.empty())
      throw ValueError("AugmentPolicy: sub-policy list is empty");
    for (const auto& sp : sub_policies)
      for (const auto& op : sp) op.validate();
  }
};

namespace detail {

inline float luma(const Image& img, int y, int x) {
  if (img.channels >= 3)
    return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) +
           0.114f * img.at(2, y, x);
  return img.at(0, y, x);
}

// Inverse affine map: src = M * (dst - center) + center + t.
inline Image affine(const Image& img, double m00, double m01, double m10,
                    double m11, double tx, double ty) {
  Image out(img.channels, img.height, img.width, 0.5f);
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double sx = m00 * (x - cx) + m01 * (y - cy) + cx + tx;
      double sy = m10 * (x - cx) + m11 * (y - cy) + cy + ty;
      int ix = static_cast<int>(std::lround(sx));
      int iy = static_cast<int>(std::lround(sy));
      if (ix < 0 || ix >= img.width || iy < 0 || iy >= img.height) continue;
      for (int c = 0; c < img.channels; ++c)
        out.at(c, y, x) = img.at(c, iy, ix);
    }
  }
  return out;
}

// Blend towards a reference image/value: out = ref + factor * (img - ref).
inline void blend_inplace(Image& img, const Image& ref, float factor) {
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    img.pix[i] = ref.pix[i] + factor * (img.pix[i] - ref.pix[i]);
  clamp01(img);
}

inline Image smoothed(const Image& img) {
  // 3x3 kernel [[1,1,1],[1,5,1],[1,1,1]]/13 on the interior, border kept
  Image out = img;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 1; y + 1 < img.height; ++y)
      for (int x = 1; x + 1 < img.width; ++x) {
        float s = 0.f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            s += img.at(c, y + dy, x + dx) * ((dy == 0 && dx == 0) ? 5.f : 1.f);
        out.at(c, y, x) = s / 13.f;
      }
  return out;
}

inline Image grayscale_ref(const Image& img) {
  Image g = img;
  if (img.channels < 3) return g;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float v = luma(img, y, x);
      for (int c = 0; c < img.channels; ++c) g.at(c, y, x) = v;
    }
  return g;
}

inline void equalize_channel(Image& img, int c) {
  std::array<int, 256> hist{};
  const int n = img.height * img.width;
  std::vector<int> q(static_cast<std::size_t>(n));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int v = static_cast<int>(std::lround(img.at(c, y, x) * 255.f));
      v = std::min(255, std::max(0, v));
      q[static_cast<std::size_t>(y) * img.width + x] = v;
      ++hist[static_cast<std::size_t>(v)];
    }
  int last_nonzero = 0;
  int nonzero_bins = 0;
  for (int i = 0; i < 256; ++i)
    if (hist[static_cast<std::size_t>(i)]) {
      last_nonzero = hist[static_cast<std::size_t>(i)];
      ++nonzero_bins;
    }
  if (nonzero_bins <= 1) return;
  int step = (n - last_nonzero) / 255;
  if (step == 0) return;
  std::array<int, 256> lut{};
  int acc = step / 2;
  for (int i = 0; i < 256; ++i) {
    lut[static_cast<std::size_t>(i)] = std::min(255, acc / step);
    acc += hist[static_cast<std::size_t>(i)];
  }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      img.at(c, y, x) =
          lut[static_cast<std::size_t>(q[static_cast<std::size_t>(y) * img.width + x])] / 255.f;
}

}  // namespace detail

// Applies one op at a signed physical magnitude. `signed_level` carries the
// sign for signed ops and the plain level otherwise.
inline Image apply_op(const Image& img, OpKind kind, double signed_level) {
  const double level = std::fabs(signed_level);
  const double sgn = signed_level < 0 ? -1.0 : 1.0;
  switch (kind) {
    case OpKind::kShearX:
      return detail::affine(img, 1, sgn * level * 0.3 / 9.0, 0, 1, 0, 0);
    case OpKind::kShearY:
      return detail::affine(img, 1, 0, sgn * level * 0.3 / 9.0, 1, 0, 0);
    case OpKind::kTranslateX:
      return detail::affine(img, 1, 0, 0, 1,
                            sgn * level / 9.0 * (150.0 / 331.0) * img.width, 0);
    case OpKind::kTranslateY:
      return detail::affine(img, 1, 0, 0, 1, 0,
                            sgn * level / 9.0 * (150.0 / 331.0) * img.height);
    case OpKind::kRotate: {
      double a = sgn * level * 30.0 / 9.0 * M_PI / 180.0;
      return detail::affine(img, std::cos(a), std::sin(a), -std::sin(a),
                            std::cos(a), 0, 0);
    }
    case OpKind::kColor: {
      Image out = img;
      if (img.channels < 3) return out;  // degenerates to identity
      detail::blend_inplace(out, detail::grayscale_ref(img),
                            static_cast<float>(1.0 + sgn * level * 0.1));
      return out;
    }
    case OpKind::kBrightness: {
      Image out = img;
      Image black(img.channels, img.height, img.width, 0.f);
      detail::blend_inplace(out, black,
                            static_cast<float>(1.0 + sgn * level * 0.1));
      return out;
    }
    case OpKind::kContrast: {
      Image out = img;
      double mean = 0.0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mean += detail::luma(img, y, x);
      mean /= img.height * img.width;
      Image ref(img.channels, img.height, img.width, static_cast<float>(mean));
      detail::blend_inplace(out, ref,
                            static_cast<float>(1.0 + sgn * level * 0.1));
      return out;
    }
    case OpKind::kSharpness: {
      Image out = img;
      detail::blend_inplace(out, detail::smoothed(img),
                            static_cast<float>(1.0 + sgn * level * 0.1));
      return out;
    }
    case OpKind::kPosterize: {
      int bits = 8 - static_cast<int>(std::lround(level * 4.0 / 9.0));
      int mask = 0xff << (8 - bits);
      Image out = img;
      for (float& v : out.pix) {
        int q = static_cast<int>(std::lround(v * 255.f)) & mask;
        v = q / 255.f;
      }
      return out;
    }
    case OpKind::kSolarize: {
      float thr = static_cast<float>((256.0 - level * 256.0 / 9.0) / 256.0);
      Image out = img;
      for (float& v : out.pix)
        if (v >= thr) v = 1.f - v;
      return out;
    }
    case OpKind::kAutoContrast: {
      Image out = img;
      for (int c = 0; c < img.channels; ++c) {
        float lo = 1.f, hi = 0.f;
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) {
            lo = std::min(lo, img.at(c, y, x));
            hi = std::max(hi, img.at(c, y, x));
          }
        if (hi <= lo) continue;
        float scale = 1.f / (hi - lo);
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x)
            out.at(c, y, x) = (img.at(c, y, x) - lo) * scale;
      }
      return out;
    }
    case OpKind::kEqualize: {
      Image out = img;
      for (int c = 0; c < img.channels; ++c) detail::equalize_channel(out, c);
      return out;
    }
    case OpKind::kInvert: {
      Image out = img;
      for (float& v : out.pix) v = 1.f - v;
      return out;
    }
  }
  throw ValueError("apply_op: unknown op kind");
}

// Selects one sub-policy uniformly, then fires its two ops in order, each
// with its own probability. The rng stream layout is fixed: one index draw,
// then (probability, sign) per op, so equal seeds give equal outputs.
template <typename Rng>
Image apply(const AugmentPolicy& policy, const Image& image, Rng& rng) {
  policy.validate();
  image.check_range();
  const auto& sp =
      policy.sub_policies[uniform_index(rng, policy.sub_policies.size())];
  Image out = image;
  for (const AugmentOp& op : sp) {
    double p = uniform_real(rng);
    double sign = uniform_index(rng, 2) == 0 ? -1.0 : 1.0;
    if (p < op.probability) {
      double level = op.magnitude;
      if (op_is_signed(op.kind)) level *= sign;
      out = apply_op(out, op.kind, level);
    }
  }
  clamp01(out);
  return out;
}

// Standard baseline augmentation: random horizontal flip plus a small random
// translation with edge replication. Not part of the policy pipeline; callers
// opt in explicitly. The rng stream layout is fixed: flip draw, then dx, dy.
template <typename Rng>
Image base_augment(const Image& image, Rng& rng) {
  image.check_range();
  bool flip = uniform_index(rng, 2) == 1;
  int max_shift = std::max(1, image.width / 8);
  int dx = static_cast<int>(uniform_index(
               rng, static_cast<std::uint64_t>(2 * max_shift + 1))) - max_shift;
  int dy = static_cast<int>(uniform_index(
               rng, static_cast<std::uint64_t>(2 * max_shift + 1))) - max_shift;
  Image out(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        int sx = std::clamp(x + dx, 0, image.width - 1);
        if (flip) sx = image.width - 1 - sx;
        int sy = std::clamp(y + dy, 0, image.height - 1);
        out.at(c, y, x) = image.at(c, sy, sx);
      }
  return out;
}

// -- policy text format -----------------------------------------------------
// One sub-policy per line, two ops separated by a comma:
//   posterize 0.4 8, rotate 0.6 9
// '#' starts a comment. Magnitude-free ops still carry a level field.

inline AugmentPolicy parse_policy(const std::string& text) {
  AugmentPolicy policy;
  std::istringstream stream(text);
  std::string line;
  int lineno = 0;
  auto fail = [&lineno](const std::string& msg) {
    throw ParseError("policy line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(stream, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected two ops separated by ','");
    std::array<AugmentOp, 2> sp;
    std::array<std::string, 2> parts = {line.substr(0, comma),
                                        line.substr(comma + 1)};
    for (int i = 0; i < 2; ++i) {
      std::istringstream ps(parts[static_cast<std::size_t>(i)]);
      std::string name;
      double prob;
      int mag;
      if (!(ps >> name >> prob >> mag)) fail("expected 'name prob magnitude'");
      bool found = false;
      for (const auto& [n, k] : op_names())
        if (n == name) {
          sp[static_cast<std::size_t>(i)].kind = k;
          found = true;
        }
      if (!found) fail("unsupported op '" + name + "'");
      if (prob < 0.0 || prob > 1.0) fail("probability outside [0,1]");
      if (mag < 0 || mag > 9) fail("magnitude level outside {0..9}");
      sp[static_cast<std::size_t>(i)].probability = prob;
      sp[static_cast<std::size_t>(i)].magnitude = mag;
    }
    policy.sub_policies.push_back(sp);
  }
  if (policy.sub_policies.empty()) fail("policy has no sub-policies");
  return policy;
}

inline std::string serialize_policy(const AugmentPolicy& policy) {
  std::ostringstream out;
  for (const auto& sp : policy.sub_policies) {
    for (int i = 0; i < 2; ++i) {
      const auto& op = sp[static_cast<std::size_t>(i)];
      out << op_name(op.kind) << ' ' << op.probability << ' ' << op.magnitude;
      out << (i == 0 ? ", " : "\n");
    }
  }
  return out.str();
}

// The 25-sub-policy ImageNet list.
inline AugmentPolicy default_policy() {
  static const char* kText = R"(
posterize 0.4 8, rotate 0.6 9
solarize 0.6 5, autocontrast 0.6 0
equalize 0.8 0, equalize 0.6 0
posterize 0.6 7, posterize 0.6 6
equalize 0.4 0, solarize 0.2 4
equalize 0.4 0, rotate 0.8 8
solarize 0.6 3, equalize 0.6 0
posterize 0.8 5, equalize 1.0 0
rotate 0.2 3, solarize 0.6 8
equalize 0.6 0, posterize 0.4 6
rotate 0.8 8, color 0.4 0
rotate 0.4 9, equalize 0.6 0
equalize 0.0 0, equalize 0.8 0
invert 0.6 0, equalize 1.0 0
color 0.6 4, contrast 1.0 8
rotate 0.8 8, color 1.0 2
color 0.8 8, solarize 0.8 7
sharpness 0.4 7, invert 0.6 0
shear_x 0.6 5, equalize 1.0 0
color 0.4 0, equalize 0.6 0
equalize 0.4 0, solarize 0.2 4
solarize 0.6 5, autocontrast 0.6 0
invert 0.6 0, equalize 1.0 0
color 0.6 4, contrast 1.0 8
equalize 0.8 0, equalize 0.6 0
)";
  return parse_policy(kText);
}

}  // namespace rrld
