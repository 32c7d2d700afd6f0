// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "rrld/common.hpp"

namespace rrld {

// CHW float image with values in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> pix;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.f)
      : channels(c), height(h), width(w),
        pix(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return pix[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return pix[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  void check_range() const {
    for (float v : pix)
      if (!(v >= 0.f && v <= 1.f))
        throw ValueError("Image: pixel value outside [0,1]");
  }
};

inline void clamp01(Image& img) {
  for (float& v : img.pix) v = std::min(1.f, std::max(0.f, v));
}

struct Sample {
  Image image;
  int label = -1;
  std::string domain;
  std::uint64_t id = 0;  // unique within a dataset; used by the access log
};

}  // namespace rrld
