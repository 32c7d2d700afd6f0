// Copyright (c) 2026 The RRLD Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rrld/common.hpp"
#include "rrld/graph.hpp"

namespace rrld {

struct BackboneConfig {
  int image_size = 32;
  int in_channels = 3;
  int patch_size = 4;
  int embed_dim = 64;
  int depth = 6;
  int heads = 4;
  double mlp_ratio = 4.0;
  int num_classes = 4;
  std::uint64_t seed = 0;

  int num_patches() const {
    int g = image_size / patch_size;
    return g * g;
  }
  int seq_len() const { return num_patches() + 1; }
  int patch_dim() const { return patch_size * patch_size * in_channels; }
  int mlp_dim() const { return static_cast<int>(embed_dim * mlp_ratio); }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw ConfigError("BackboneConfig: image_size must be divisible by patch_size");
    if (in_channels <= 0) throw ConfigError("BackboneConfig: in_channels must be positive");
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
      throw ConfigError("BackboneConfig: embed_dim must be divisible by heads");
    if (depth < 2)
      throw ConfigError("BackboneConfig: depth must be >= 2 (no intermediate block otherwise)");
    if (num_classes < 2) throw ConfigError("BackboneConfig: num_classes must be >= 2");
    if (mlp_ratio <= 0.0) throw ConfigError("BackboneConfig: mlp_ratio must be positive");
  }
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"image_size", c.image_size}, {"in_channels", c.in_channels},
       {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
       {"depth", c.depth},           {"heads", c.heads},
       {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
  j.at("image_size").get_to(c.image_size);
  j.at("in_channels").get_to(c.in_channels);
  j.at("patch_size").get_to(c.patch_size);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("num_classes").get_to(c.num_classes);
  j.at("seed").get_to(c.seed);
}

// Uniform draw from the intermediate blocks {1 .. depth-1}.
template <typename Rng>
int sample_block_index(Rng& rng, int depth) {
  if (depth < 2) throw ConfigError("sample_block_index: depth must be >= 2");
  return 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(depth - 1)));
}

// Node ids of one recorded forward pass. `param_nodes` is aligned with
// Model::params so gradients can be read back by index.
struct ForwardIds {
  int final_logits = -1;
  int tapped_logits = -1;
  std::vector<int> param_nodes;
};

// Pre-norm ViT with a class token, learned positional embeddings, and one
// classifier head shared between the final block and any tapped block.
template <typename T>
class Model {
 public:
  using Mat = MatX<T>;

  BackboneConfig config;
  std::vector<std::pair<std::string, Mat>> params;

  static Model init(const BackboneConfig& cfg) {
    cfg.validate();
    Model m;
    m.config = cfg;
    std::mt19937_64 rng(derive_seed(cfg.seed, "model-init"));
    auto tn = [&rng](Eigen::Index r, Eigen::Index c) {
      Mat w(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j)
          w(i, j) = static_cast<T>(truncated_normal(rng, 0.02));
      return w;
    };
    auto zeros = [](Eigen::Index r, Eigen::Index c) { return Mat::Zero(r, c); };
    auto ones = [](Eigen::Index r, Eigen::Index c) { return Mat::Ones(r, c); };

    const int e = cfg.embed_dim;
    m.add("patch_embed.weight", tn(cfg.patch_dim(), e));
    m.add("patch_embed.bias", zeros(1, e));
    m.add("cls_token", tn(1, e));
    m.add("pos_embed", tn(cfg.seq_len(), e));
    for (int b = 0; b < cfg.depth; ++b) {
      std::string p = "blocks." + std::to_string(b) + ".";
      m.add(p + "ln1.gamma", ones(1, e));
      m.add(p + "ln1.beta", zeros(1, e));
      m.add(p + "qkv.weight", tn(e, 3 * e));
      m.add(p + "qkv.bias", zeros(1, 3 * e));
      m.add(p + "proj.weight", tn(e, e));
      m.add(p + "proj.bias", zeros(1, e));
      m.add(p + "ln2.gamma", ones(1, e));
      m.add(p + "ln2.beta", zeros(1, e));
      m.add(p + "fc1.weight", tn(e, cfg.mlp_dim()));
      m.add(p + "fc1.bias", zeros(1, cfg.mlp_dim()));
      m.add(p + "fc2.weight", tn(cfg.mlp_dim(), e));
      m.add(p + "fc2.bias", zeros(1, e));
    }
    m.add("norm.gamma", ones(1, e));
    m.add("norm.beta", zeros(1, e));
    m.add("head.weight", tn(e, cfg.num_classes));
    m.add("head.bias", zeros(1, cfg.num_classes));
    return m;
  }

  Mat& param(const std::string& name) {
    for (auto& [n, v] : params)
      if (n == name) return v;
    throw ValueError("Model: unknown parameter " + name);
  }

  // Rearranges a CHW pixel buffer batch into patch rows: one row per patch,
  // patches in row-major grid order, columns ordered channel-major then
  // pixel row-major inside the patch.
  Mat patchify(const std::vector<const float*>& images) const {
    const int g = config.image_size / config.patch_size;
    const int ps = config.patch_size;
    const int hw = config.image_size;
    Mat out(static_cast<Eigen::Index>(images.size()) * config.num_patches(),
            config.patch_dim());
    for (std::size_t b = 0; b < images.size(); ++b) {
      const float* img = images[b];
      for (int py = 0; py < g; ++py) {
        for (int px = 0; px < g; ++px) {
          Eigen::Index row = static_cast<Eigen::Index>(b) * config.num_patches() + py * g + px;
          int col = 0;
          for (int c = 0; c < config.in_channels; ++c)
            for (int y = 0; y < ps; ++y)
              for (int x = 0; x < ps; ++x)
                out(row, col++) = static_cast<T>(
                    img[(c * hw + py * ps + y) * hw + px * ps + x]);
        }
      }
    }
    return out;
  }

  // Records a full forward pass on the tape. tap_block in [1, depth-1]
  // additionally emits logits from the class token after that block, through
  // the same final norm and head. tap_block = -1 disables the tap.
  ForwardIds forward(Graph<T>& g, const Mat& patch_rows, int batch,
                     bool requires_grad, int tap_block = -1) const {
    if (patch_rows.rows() != static_cast<Eigen::Index>(batch) * config.num_patches() ||
        patch_rows.cols() != config.patch_dim())
      throw DimensionError("forward: patch rows do not match config");
    if (batch <= 0) throw DimensionError("forward: empty batch");
    if (tap_block == 0 || tap_block >= config.depth || tap_block < -1)
      throw ValueError("forward: tap block index out of range [1, depth-1]");

    ForwardIds ids;
    std::vector<int> pn(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      pn[i] = g.input(params[i].second, requires_grad);
    ids.param_nodes = pn;
    auto node = [&](const std::string& name) {
      for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].first == name) return pn[i];
      throw ValueError("forward: unknown parameter " + name);
    };

    int x = g.input(patch_rows, false);
    x = g.add_bias(g.matmul(x, node("patch_embed.weight")), node("patch_embed.bias"));
    x = g.prepend_token(x, node("cls_token"), batch);
    x = g.add_positional(x, node("pos_embed"), batch);

    int tapped_hidden = -1;
    for (int b = 0; b < config.depth; ++b) {
      std::string p = "blocks." + std::to_string(b) + ".";
      int h = g.layer_norm(x, node(p + "ln1.gamma"), node(p + "ln1.beta"));
      h = g.add_bias(g.matmul(h, node(p + "qkv.weight")), node(p + "qkv.bias"));
      h = g.attention(h, batch, config.heads);
      h = g.add_bias(g.matmul(h, node(p + "proj.weight")), node(p + "proj.bias"));
      x = g.add(x, h);
      int m = g.layer_norm(x, node(p + "ln2.gamma"), node(p + "ln2.beta"));
      m = g.add_bias(g.matmul(m, node(p + "fc1.weight")), node(p + "fc1.bias"));
      m = g.gelu(m);
      m = g.add_bias(g.matmul(m, node(p + "fc2.weight")), node(p + "fc2.bias"));
      x = g.add(x, m);
      if (b + 1 == tap_block) tapped_hidden = x;
    }

    auto head = [&](int hidden) {
      int cls = g.class_rows(hidden, batch);
      cls = g.layer_norm(cls, node("norm.gamma"), node("norm.beta"));
      return g.add_bias(g.matmul(cls, node("head.weight")), node("head.bias"));
    };
    ids.final_logits = head(x);
    if (tapped_hidden >= 0) ids.tapped_logits = head(tapped_hidden);
    return ids;
  }

  // Plain inference: batch x num_classes logits, no gradient bookkeeping.
  Mat logits(const std::vector<const float*>& images) const {
    if (images.empty()) throw DimensionError("logits: empty batch");
    Graph<T> g;
    auto ids = forward(g, patchify(images), static_cast<int>(images.size()), false);
    return g.value(ids.final_logits);
  }

 private:
  void add(std::string name, Mat v) { params.emplace_back(std::move(name), std::move(v)); }
};

// -- checkpoint format ------------------------------------------------------
// magic "RRLDCKPT", u32 version, u32 json length, config JSON, u64 array
// count, then per array: u32 name length, name, u8 scalar size, u64 rows,
// u64 cols, raw row-major data. Round trips are bit-exact.

inline constexpr char kCheckpointMagic[9] = "RRLDCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const std::vector<std::pair<std::string, MatX<T>>>& extra = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_checkpoint: cannot open " + path);
  auto put = [&f](const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  f.write(kCheckpointMagic, 8);
  std::uint32_t version = kCheckpointVersion;
  put(&version, 4);
  std::string cfg = nlohmann::json(model.config).dump();
  std::uint32_t jl = static_cast<std::uint32_t>(cfg.size());
  put(&jl, 4);
  put(cfg.data(), cfg.size());
  std::uint64_t count = model.params.size() + extra.size();
  put(&count, 8);
  auto write_array = [&](const std::string& name, const MatX<T>& v) {
    std::uint32_t nl = static_cast<std::uint32_t>(name.size());
    put(&nl, 4);
    put(name.data(), name.size());
    std::uint8_t sz = sizeof(T);
    put(&sz, 1);
    std::uint64_t r = static_cast<std::uint64_t>(v.rows());
    std::uint64_t c = static_cast<std::uint64_t>(v.cols());
    put(&r, 8);
    put(&c, 8);
    put(v.data(), sizeof(T) * v.size());
  };
  for (const auto& [n, v] : model.params) write_array(n, v);
  for (const auto& [n, v] : extra) write_array(n, v);
  if (!f) throw IoError("save_checkpoint: write failed for " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path,
                         std::vector<std::pair<std::string, MatX<T>>>* extra = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_checkpoint: cannot open " + path);
  auto get = [&f, &path](void* p, std::size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f) throw IoError("load_checkpoint: truncated file " + path);
  };
  char magic[8];
  get(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("load_checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  get(&version, 4);
  if (version != kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported version in " + path);
  std::uint32_t jl = 0;
  get(&jl, 4);
  std::string cfg(jl, '\0');
  get(cfg.data(), jl);
  Model<T> m;
  m.config = nlohmann::json::parse(cfg).get<BackboneConfig>();
  std::uint64_t count = 0;
  get(&count, 8);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t nl = 0;
    get(&nl, 4);
    std::string name(nl, '\0');
    get(name.data(), nl);
    std::uint8_t sz = 0;
    get(&sz, 1);
    if (sz != sizeof(T))
      throw IoError("load_checkpoint: scalar width mismatch in " + path);
    std::uint64_t r = 0, c = 0;
    get(&r, 8);
    get(&c, 8);
    MatX<T> v(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    get(v.data(), sizeof(T) * v.size());
    if (extra && name.rfind("opt.", 0) == 0)
      extra->emplace_back(std::move(name), std::move(v));
    else
      m.params.emplace_back(std::move(name), std::move(v));
  }
  return m;
}

}  // namespace rrld
