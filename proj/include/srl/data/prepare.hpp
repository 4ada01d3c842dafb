#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "srl/config.hpp"
#include "srl/data/dataset.hpp"
#include "srl/data/synthetic.hpp"

namespace srl {

struct DatasetSplits {
  DatasetManifest train;
  DatasetManifest val;
};

inline SyntheticShapesSpec synthetic_spec_from(const TrainConfig& cfg) {
  SyntheticShapesSpec spec;
  spec.image_size = cfg.data_image_size;
  spec.classes = cfg.data_classes;
  spec.per_class_train = cfg.data_per_class_train;
  spec.per_class_val = cfg.data_per_class_val;
  spec.seed = static_cast<std::uint64_t>(cfg.data_seed);
  return spec;
}

/// Loads the dataset named by the config. Synthetic data is generated on
/// first use under data.root; a marker file records the generating spec so a
/// changed spec regenerates instead of silently reusing stale files.
inline DatasetSplits ensure_dataset(const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path root(cfg.data_root);
  const fs::path train_p = root / "train.txt";
  const fs::path val_p = root / "val.txt";
  if (!cfg.data_synthetic) {
    if (!fs::exists(train_p))
      throw IoError("dataset manifest not found: " + train_p.string());
    DatasetSplits out;
    out.train = load_manifest(train_p.string());
    out.val = fs::exists(val_p) ? load_manifest(val_p.string()) : DatasetManifest{};
    return out;
  }
  const SyntheticShapesSpec spec = synthetic_spec_from(cfg);
  const std::string marker =
      "size=" + std::to_string(spec.image_size) +
      " classes=" + std::to_string(spec.classes) +
      " train=" + std::to_string(spec.per_class_train) +
      " val=" + std::to_string(spec.per_class_val) +
      " seed=" + std::to_string(spec.seed) + "\n";
  const fs::path marker_p = root / "data_spec.txt";
  bool fresh = true;
  if (fs::exists(train_p) && fs::exists(val_p) && fs::exists(marker_p)) {
    std::ifstream m(marker_p);
    std::string existing((std::istreambuf_iterator<char>(m)),
                         std::istreambuf_iterator<char>());
    fresh = existing != marker;
  }
  if (fresh) {
    fs::create_directories(root);
    generate_synthetic(spec, root.string());
    std::ofstream m(marker_p, std::ios::trunc);
    m << marker;
  }
  DatasetSplits out;
  out.train = load_manifest(train_p.string());
  out.val = load_manifest(val_p.string());
  return out;
}

}  // namespace srl
