#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "srl/core/error.hpp"
#include "srl/core/serialize.hpp"

namespace srl {

/// Every tunable of the engine, with toy-scale defaults. Keys are namespaced
/// by module (e.g. relation.t_p) and parsed from flat `key = value` files.
struct TrainConfig {
  // model.*
  int model_image_size = 64;
  int model_patch_size = 8;
  int model_embed_dim = 96;
  int model_depth = 4;
  int model_attn_heads = 4;
  int model_mlp_ratio = 4;
  bool model_pos_embed = true;

  // relation.*  (paper-scale overlap grids are 13 and 6)
  double relation_t_p = 0.5;
  double relation_t_c = 0.1;
  int relation_heads = 6;
  int relation_grid_global = 7;
  int relation_grid_local = 4;
  double relation_min_overlap = 0.01;

  // aug.*
  int aug_global_size = 64;
  int aug_local_size = 32;
  int aug_n_local = 4;
  double aug_global_ratio_min = 0.35;
  double aug_global_ratio_max = 1.0;
  double aug_local_ratio_min = 0.05;
  double aug_local_ratio_max = 0.35;
  double aug_aspect_min = 0.75;
  double aug_aspect_max = 4.0 / 3.0;
  double aug_hflip_prob = 0.5;
  double aug_color_jitter_prob = 0.8;
  double aug_grayscale_prob = 0.2;
  double aug_blur_prob = 0.5;

  // losses.*
  bool losses_enable_image = true;
  bool losses_enable_pixel = true;
  bool losses_enable_channel = true;
  double losses_weight_image = 1.0;
  double losses_weight_pixel = 1.0;
  double losses_weight_channel = 1.0;
  bool losses_asymmetric = true;
  int losses_prototypes = 1024;
  int losses_image_hidden = 256;
  int losses_image_bottleneck = 64;
  double losses_student_temp = 0.1;
  double losses_teacher_temp = 0.04;
  double losses_center_momentum = 0.9;

  // train.*
  int train_epochs = 20;
  int train_batch_size = 32;
  double train_base_lr = 5e-4;  // scaled linearly by batch/256
  double train_lr_floor = 1e-6;
  double train_warmup_frac = 0.05;
  double train_weight_decay = 0.04;
  double train_clip_norm = 3.0;
  double train_ema_base = 0.996;
  std::int64_t train_seed = 0;
  std::string train_precision = "f32";
  int train_checkpoint_every = 0;  // epochs; 0 = final only

  // data.*
  std::string data_root = "data/shapes";
  bool data_synthetic = true;
  int data_classes = 8;
  int data_per_class_train = 256;
  int data_per_class_val = 64;
  int data_image_size = 64;
  std::int64_t data_seed = 1234;

  // eval.*
  int eval_n_pairs = 64;
  std::int64_t eval_seed = 7;
  bool eval_photometric = true;

  // probe.*
  int probe_epochs = 50;
  double probe_lr = 1e-3;
  int probe_batch_size = 128;
  std::int64_t probe_seed = 11;

  double peak_lr() const {
    return train_base_lr * static_cast<double>(train_batch_size) / 256.0;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (model_image_size % model_patch_size != 0)
      fail("model.image_size must be divisible by model.patch_size");
    if (aug_local_size % model_patch_size != 0)
      fail("aug.local_size must be divisible by model.patch_size");
    if (model_embed_dim % model_attn_heads != 0)
      fail("model.embed_dim must be divisible by model.attn_heads");
    if (model_embed_dim % relation_heads != 0)
      fail("model.embed_dim must be divisible by relation.heads");
    if (relation_t_p <= 0 || relation_t_c <= 0)
      fail("relation temperatures must be positive");
    if (aug_global_ratio_min > aug_global_ratio_max ||
        aug_local_ratio_min > aug_local_ratio_max)
      fail("augmentation ratio ranges are inverted");
    if (aug_n_local < 0) fail("aug.n_local must be >= 0");
    if (train_epochs <= 0 || train_batch_size <= 0)
      fail("train.epochs and train.batch_size must be positive");
    if (train_precision != "f32" && train_precision != "f64")
      fail("train.precision must be f32 or f64");
    if (!losses_enable_image && !losses_enable_pixel && !losses_enable_channel)
      fail("all loss components disabled");
    if (data_classes <= 0) fail("data.classes must be positive");
  }
};

namespace detail {

enum class KeyKind { Bool, Int, I64, Double, Str };

struct KeyRef {
  const char* name;
  KeyKind kind;
  void* ptr;
};

inline std::vector<KeyRef> key_table(TrainConfig& c) {
  using K = KeyKind;
  return {
      {"model.image_size", K::Int, &c.model_image_size},
      {"model.patch_size", K::Int, &c.model_patch_size},
      {"model.embed_dim", K::Int, &c.model_embed_dim},
      {"model.depth", K::Int, &c.model_depth},
      {"model.attn_heads", K::Int, &c.model_attn_heads},
      {"model.mlp_ratio", K::Int, &c.model_mlp_ratio},
      {"model.pos_embed", K::Bool, &c.model_pos_embed},
      {"relation.t_p", K::Double, &c.relation_t_p},
      {"relation.t_c", K::Double, &c.relation_t_c},
      {"relation.heads", K::Int, &c.relation_heads},
      {"relation.grid_global", K::Int, &c.relation_grid_global},
      {"relation.grid_local", K::Int, &c.relation_grid_local},
      {"relation.min_overlap", K::Double, &c.relation_min_overlap},
      {"aug.global_size", K::Int, &c.aug_global_size},
      {"aug.local_size", K::Int, &c.aug_local_size},
      {"aug.n_local", K::Int, &c.aug_n_local},
      {"aug.global_ratio_min", K::Double, &c.aug_global_ratio_min},
      {"aug.global_ratio_max", K::Double, &c.aug_global_ratio_max},
      {"aug.local_ratio_min", K::Double, &c.aug_local_ratio_min},
      {"aug.local_ratio_max", K::Double, &c.aug_local_ratio_max},
      {"aug.aspect_min", K::Double, &c.aug_aspect_min},
      {"aug.aspect_max", K::Double, &c.aug_aspect_max},
      {"aug.hflip_prob", K::Double, &c.aug_hflip_prob},
      {"aug.color_jitter_prob", K::Double, &c.aug_color_jitter_prob},
      {"aug.grayscale_prob", K::Double, &c.aug_grayscale_prob},
      {"aug.blur_prob", K::Double, &c.aug_blur_prob},
      {"losses.enable_image", K::Bool, &c.losses_enable_image},
      {"losses.enable_pixel", K::Bool, &c.losses_enable_pixel},
      {"losses.enable_channel", K::Bool, &c.losses_enable_channel},
      {"losses.weight_image", K::Double, &c.losses_weight_image},
      {"losses.weight_pixel", K::Double, &c.losses_weight_pixel},
      {"losses.weight_channel", K::Double, &c.losses_weight_channel},
      {"losses.asymmetric", K::Bool, &c.losses_asymmetric},
      {"losses.prototypes", K::Int, &c.losses_prototypes},
      {"losses.image_hidden", K::Int, &c.losses_image_hidden},
      {"losses.image_bottleneck", K::Int, &c.losses_image_bottleneck},
      {"losses.student_temp", K::Double, &c.losses_student_temp},
      {"losses.teacher_temp", K::Double, &c.losses_teacher_temp},
      {"losses.center_momentum", K::Double, &c.losses_center_momentum},
      {"train.epochs", K::Int, &c.train_epochs},
      {"train.batch_size", K::Int, &c.train_batch_size},
      {"train.base_lr", K::Double, &c.train_base_lr},
      {"train.lr_floor", K::Double, &c.train_lr_floor},
      {"train.warmup_frac", K::Double, &c.train_warmup_frac},
      {"train.weight_decay", K::Double, &c.train_weight_decay},
      {"train.clip_norm", K::Double, &c.train_clip_norm},
      {"train.ema_base", K::Double, &c.train_ema_base},
      {"train.seed", K::I64, &c.train_seed},
      {"train.precision", K::Str, &c.train_precision},
      {"train.checkpoint_every", K::Int, &c.train_checkpoint_every},
      {"data.root", K::Str, &c.data_root},
      {"data.synthetic", K::Bool, &c.data_synthetic},
      {"data.classes", K::Int, &c.data_classes},
      {"data.per_class_train", K::Int, &c.data_per_class_train},
      {"data.per_class_val", K::Int, &c.data_per_class_val},
      {"data.image_size", K::Int, &c.data_image_size},
      {"data.seed", K::I64, &c.data_seed},
      {"eval.n_pairs", K::Int, &c.eval_n_pairs},
      {"eval.seed", K::I64, &c.eval_seed},
      {"eval.photometric", K::Bool, &c.eval_photometric},
      {"probe.epochs", K::Int, &c.probe_epochs},
      {"probe.lr", K::Double, &c.probe_lr},
      {"probe.batch_size", K::Int, &c.probe_batch_size},
      {"probe.seed", K::I64, &c.probe_seed},
  };
}

inline int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Applies `key = value` to the config. Unknown keys are rejected, naming the
/// nearest valid key.
inline void config_set(TrainConfig& cfg, const std::string& key,
                       const std::string& raw_value) {
  const std::string value = detail::trim(raw_value);
  auto table = detail::key_table(cfg);
  for (const auto& k : table) {
    if (key != k.name) continue;
    try {
      switch (k.kind) {
        case detail::KeyKind::Bool: {
          if (value == "true" || value == "1")
            *static_cast<bool*>(k.ptr) = true;
          else if (value == "false" || value == "0")
            *static_cast<bool*>(k.ptr) = false;
          else
            throw ConfigError("");
          break;
        }
        case detail::KeyKind::Int:
          *static_cast<int*>(k.ptr) = std::stoi(value);
          break;
        case detail::KeyKind::I64:
          *static_cast<std::int64_t*>(k.ptr) = std::stoll(value);
          break;
        case detail::KeyKind::Double:
          *static_cast<double*>(k.ptr) = std::stod(value);
          break;
        case detail::KeyKind::Str:
          *static_cast<std::string*>(k.ptr) = value;
          break;
      }
    } catch (const std::exception&) {
      throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
    }
    return;
  }
  // Unknown key: suggest the closest one.
  int best = 1 << 30;
  std::string nearest;
  for (const auto& k : table) {
    const int d = detail::edit_distance(key, k.name);
    if (d < best) {
      best = d;
      nearest = k.name;
    }
  }
  throw ConfigError("unknown config key '" + key + "' (nearest valid key: '" +
                    nearest + "')");
}

/// Parses flat `key = value` lines; `#` starts a comment.
inline void config_apply_text(TrainConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    config_set(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline void config_apply_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  config_apply_text(cfg, text);
}

/// Canonical resolved-config text: one key per line, table order, shortest
/// round-trip formatting. This text is the basis of the config digest.
inline std::string config_to_text(const TrainConfig& cfg) {
  auto table = detail::key_table(const_cast<TrainConfig&>(cfg));
  std::string out;
  for (const auto& k : table) {
    out += k.name;
    out += " = ";
    switch (k.kind) {
      case detail::KeyKind::Bool:
        out += *static_cast<const bool*>(k.ptr) ? "true" : "false";
        break;
      case detail::KeyKind::Int:
        out += std::to_string(*static_cast<const int*>(k.ptr));
        break;
      case detail::KeyKind::I64:
        out += std::to_string(*static_cast<const std::int64_t*>(k.ptr));
        break;
      case detail::KeyKind::Double:
        out += detail::format_double(*static_cast<const double*>(k.ptr));
        break;
      case detail::KeyKind::Str:
        out += *static_cast<const std::string*>(k.ptr);
        break;
    }
    out += "\n";
  }
  return out;
}

inline std::uint64_t config_digest(const TrainConfig& cfg) {
  return fnv1a64(config_to_text(cfg));
}

inline TrainConfig config_from_text(const std::string& text) {
  TrainConfig cfg;
  config_apply_text(cfg, text);
  return cfg;
}

}  // namespace srl
