// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset layout: root/<domain>/<class>/<image>.png

#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rrld/data.hpp"

namespace rrld {

inline void save_image_png(const std::string& path, const Image& img) {
  cv::Mat mat;
  if (img.channels == 1) {
    mat.create(img.height, img.width, CV_8UC1);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        mat.at<std::uint8_t>(y, x) =
            static_cast<std::uint8_t>(std::lround(img.at(0, y, x) * 255.f));
  } else if (img.channels == 3) {
    mat.create(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        mat.at<cv::Vec3b>(y, x) = {
            static_cast<std::uint8_t>(std::lround(img.at(2, y, x) * 255.f)),
            static_cast<std::uint8_t>(std::lround(img.at(1, y, x) * 255.f)),
            static_cast<std::uint8_t>(std::lround(img.at(0, y, x) * 255.f))};
  } else {
    throw IoError("save_image_png: unsupported channel count");
  }
  if (!cv::imwrite(path, mat))
    throw IoError("save_image_png: cannot write " + path);
}

inline Image load_image_png(const std::string& path, int image_size,
                            int channels) {
  cv::Mat mat = cv::imread(path, channels == 1 ? cv::IMREAD_GRAYSCALE
                                               : cv::IMREAD_COLOR);
  if (mat.empty()) throw IoError("load_image: unreadable file " + path);
  if (mat.rows != image_size || mat.cols != image_size)
    cv::resize(mat, mat, {image_size, image_size}, 0, 0, cv::INTER_AREA);
  Image img(channels, image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      if (channels == 1) {
        img.at(0, y, x) = mat.at<std::uint8_t>(y, x) / 255.f;
      } else {
        auto px = mat.at<cv::Vec3b>(y, x);
        img.at(0, y, x) = px[2] / 255.f;
        img.at(1, y, x) = px[1] / 255.f;
        img.at(2, y, x) = px[0] / 255.f;
      }
    }
  return img;
}

inline void save_image_folder(const MultiDomainDataset& ds,
                              const std::string& root) {
  namespace fs = std::filesystem;
  std::map<std::string, int> counters;
  for (const auto& s : ds.samples) {
    const std::string& cls = ds.class_names[static_cast<std::size_t>(s.label)];
    fs::path dir = fs::path(root) / s.domain / cls;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("save_image_folder: cannot create " + dir.string());
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05d.png",
                  counters[s.domain + "/" + cls]++);
    save_image_png((dir / name).string(), s.image);
  }
}

// Loads root/domain/class/image trees with deterministic lexicographic
// ordering. All domains must share the same class subdirectories.
inline MultiDomainDataset load_image_folder(const std::string& root,
                                            int image_size, int channels = 3) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw IoError("load_image_folder: no such directory " + root);
  auto sorted_subdirs = [](const fs::path& p) {
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
  };
  MultiDomainDataset ds;
  ds.domains = sorted_subdirs(root);
  if (ds.domains.size() < 2)
    throw IoError("load_image_folder: need at least 2 domain directories");
  // class vocabulary from the first domain; all others must match exactly
  ds.class_names = sorted_subdirs(fs::path(root) / ds.domains[0]);
  if (ds.class_names.size() < 2)
    throw IoError("load_image_folder: need at least 2 class directories");
  for (const auto& d : ds.domains) {
    auto classes = sorted_subdirs(fs::path(root) / d);
    if (classes != ds.class_names)
      throw IoError("load_image_folder: class set of domain '" + d +
                    "' differs from domain '" + ds.domains[0] + "'");
  }
  std::uint64_t next_id = 0;
  for (const auto& d : ds.domains) {
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
      fs::path dir = fs::path(root) / d / ds.class_names[c];
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        Sample s;
        s.image = load_image_png(f, image_size, channels);
        s.label = static_cast<int>(c);
        s.domain = d;
        s.id = next_id++;
        ds.samples.push_back(std::move(s));
      }
    }
  }
  ds.validate();
  return ds;
}

}  // namespace rrld
