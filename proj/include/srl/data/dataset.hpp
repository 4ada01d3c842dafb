#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "srl/core/error.hpp"

namespace srl {

struct ManifestEntry {
  std::string rel_path;
  int label = -1;  // -1 when unlabeled
};

/// A list of images under a root directory. One manifest per split; splits
/// live in separate files (train.txt / val.txt).
struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;

  int num_classes() const {
    int k = 0;
    for (const auto& e : entries) k = std::max(k, e.label + 1);
    return k;
  }

  std::string full_path(std::size_t i) const {
    return (std::filesystem::path(root) / entries[i].rel_path).string();
  }
};

/// Format: one entry per line, `relative/path.png [label]`.
inline void write_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write manifest: " + path);
  for (const auto& e : m.entries) {
    f << e.rel_path;
    if (e.label >= 0) f << " " << e.label;
    f << "\n";
  }
}

/// Loads and validates a manifest: paths must exist, labels (when present)
/// must form a contiguous 0..K-1 range.
inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string line;
  std::set<int> labels;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    const std::size_t sp = line.find_last_of(' ');
    if (sp != std::string::npos && sp + 1 < line.size() &&
        line.find_first_not_of("0123456789", sp + 1) == std::string::npos) {
      e.rel_path = line.substr(0, sp);
      e.label = std::stoi(line.substr(sp + 1));
      labels.insert(e.label);
    } else {
      e.rel_path = line;
    }
    if (!std::filesystem::exists(std::filesystem::path(m.root) / e.rel_path))
      throw IoError("manifest line " + std::to_string(lineno) +
                    ": missing file " + e.rel_path);
    m.entries.push_back(std::move(e));
  }
  if (!labels.empty()) {
    int expect = 0;
    for (int l : labels)
      if (l != expect++)
        throw ValueError("manifest labels are not contiguous 0..K-1");
  }
  return m;
}

}  // namespace srl
