#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "srl/config.hpp"
#include "srl/data/prepare.hpp"
#include "srl/eval/evaluate.hpp"
#include "srl/train/trainer.hpp"

namespace srl {

/// One configuration cell of the ablation grid: a label plus the config
/// overrides that produce it.
struct AblationCell {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct AblationAxis {
  std::string name;
  std::vector<AblationCell> cells;
};

/// Cross product of the axes. No axes -> a single default cell.
inline std::vector<AblationCell> cross_axes(const std::vector<AblationAxis>& axes) {
  std::vector<AblationCell> cells{AblationCell{"default", {}}};
  for (const auto& axis : axes) {
    std::vector<AblationCell> next;
    for (const auto& base : cells)
      for (const auto& c : axis.cells) {
        AblationCell merged;
        merged.label = base.label == "default" ? c.label : base.label + "," + c.label;
        merged.overrides = base.overrides;
        merged.overrides.insert(merged.overrides.end(), c.overrides.begin(),
                                c.overrides.end());
        next.push_back(std::move(merged));
      }
    cells = std::move(next);
  }
  return cells;
}

/// Axis grammar (value lists are comma-separated):
///   M=1,3,6,12,16            -> relation.heads
///   temps=0.5:0.1,0.5:0.5    -> (relation.t_p, relation.t_c) pairs
///   asymmetric=on,off        -> losses.asymmetric
///   losses=I+P+C,I,P+C       -> loss component toggles
inline AblationAxis parse_ablation_axis(const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("ablation axis must look like name=v1,v2,... : " + spec);
  AblationAxis axis;
  axis.name = spec.substr(0, eq);
  std::string rest = spec.substr(eq + 1);
  std::vector<std::string> values;
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const std::size_t c = rest.find(',', pos);
    values.push_back(rest.substr(pos, c == std::string::npos ? std::string::npos : c - pos));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  if (values.empty() || values[0].empty())
    throw ConfigError("ablation axis has no values: " + spec);
  for (const std::string& v : values) {
    AblationCell cell;
    if (axis.name == "M") {
      cell.label = "M=" + v;
      cell.overrides = {{"relation.heads", v}};
    } else if (axis.name == "temps") {
      const std::size_t colon = v.find(':');
      if (colon == std::string::npos)
        throw ConfigError("temps axis values must be t_p:t_c, got " + v);
      cell.label = "tp=" + v.substr(0, colon) + ",tc=" + v.substr(colon + 1);
      cell.overrides = {{"relation.t_p", v.substr(0, colon)},
                        {"relation.t_c", v.substr(colon + 1)}};
    } else if (axis.name == "asymmetric") {
      if (v != "on" && v != "off")
        throw ConfigError("asymmetric axis values are on/off, got " + v);
      cell.label = "asymmetric=" + v;
      cell.overrides = {{"losses.asymmetric", v == "on" ? "true" : "false"}};
    } else if (axis.name == "losses") {
      bool i = false, p = false, c = false;
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k] == 'I') i = true;
        else if (v[k] == 'P') p = true;
        else if (v[k] == 'C') c = true;
        else if (v[k] != '+')
          throw ConfigError("losses axis values use I, P, C and '+', got " + v);
      }
      if (!i && !p && !c) throw ConfigError("losses axis cell enables nothing: " + v);
      cell.label = "losses=" + v;
      cell.overrides = {{"losses.enable_image", i ? "true" : "false"},
                        {"losses.enable_pixel", p ? "true" : "false"},
                        {"losses.enable_channel", c ? "true" : "false"}};
    } else {
      throw ConfigError("unknown ablation axis '" + axis.name +
                        "' (valid: M, temps, asymmetric, losses)");
    }
    axis.cells.push_back(std::move(cell));
  }
  return axis;
}

struct AblationRow {
  std::string label;
  std::uint64_t digest = 0;  // config digest of the cell at the first seed
  int seeds = 0;
  double pixel_mean = 0, pixel_std = 0;
  double channel_mean = 0, channel_std = 0;
  double probe_mean = 0, probe_std = 0;
};

namespace detail {

inline void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  sd = 0;
  if (xs.size() > 1) {
    for (double x : xs) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(xs.size() - 1));
  }
}

}  // namespace detail

/// Trains every cell x seed combination for the configured budget, then
/// evaluates relation differences and the linear probe. Writes one table row
/// per cell to <out_dir>/results.txt; per-run outputs (metrics, checkpoints,
/// resolved configs) land under <out_dir>/cells/<label>/seed<k>/.
template <typename T>
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const std::vector<AblationCell>& cells,
                                      const std::vector<std::int64_t>& seeds,
                                      const std::string& out_dir,
                                      bool quiet = true) {
  namespace fs = std::filesystem;
  if (seeds.empty()) throw ConfigError("run_ablation: no seeds given");
  fs::create_directories(out_dir);
  DatasetSplits data = ensure_dataset(base);
  std::vector<Array<T>> train_images, val_images;
  std::vector<int> train_labels, val_labels;
  for (std::size_t i = 0; i < data.train.entries.size(); ++i) {
    train_images.push_back(load_image<T>(data.train.full_path(i)));
    train_labels.push_back(data.train.entries[i].label);
  }
  for (std::size_t i = 0; i < data.val.entries.size(); ++i) {
    val_images.push_back(load_image<T>(data.val.full_path(i)));
    val_labels.push_back(data.val.entries[i].label);
  }

  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row;
    row.label = cell.label;
    std::vector<double> pds, cds, accs;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      TrainConfig cfg = base;
      for (const auto& kv : cell.overrides) config_set(cfg, kv.first, kv.second);
      cfg.train_seed = seeds[si];
      cfg.validate();
      if (si == 0) row.digest = config_digest(cfg);
      const fs::path run_dir =
          fs::path(out_dir) / "cells" / cell.label / ("seed" + std::to_string(seeds[si]));
      Trainer<T> trainer(cfg);
      trainer.set_dataset(data.train);
      trainer.run(run_dir.string(), quiet);
      RelationDiffReport rd = relation_difference(
          trainer.student(), cfg, val_images, cfg.eval_n_pairs,
          static_cast<std::uint64_t>(cfg.eval_seed));
      const double acc = linear_probe(trainer.student(), cfg, train_images,
                                      train_labels, val_images, val_labels);
      pds.push_back(rd.pixel_diff);
      cds.push_back(rd.channel_diff);
      accs.push_back(acc);
    }
    row.seeds = static_cast<int>(seeds.size());
    detail::mean_std(pds, row.pixel_mean, row.pixel_std);
    detail::mean_std(cds, row.channel_mean, row.channel_std);
    detail::mean_std(accs, row.probe_mean, row.probe_std);
    rows.push_back(row);
    if (!quiet) std::cout << "cell " << cell.label << " done" << std::endl;
  }

  std::ofstream table(fs::path(out_dir) / "results.txt", std::ios::trunc);
  table << "# cell digest seeds pixel_diff_mean pixel_diff_std "
           "channel_diff_mean channel_diff_std probe_acc_mean probe_acc_std\n";
  char digest_hex[32];
  for (const auto& r : rows) {
    std::snprintf(digest_hex, sizeof(digest_hex), "%016llx",
                  static_cast<unsigned long long>(r.digest));
    table << r.label << " " << digest_hex << " " << r.seeds << " "
          << detail::format_double(r.pixel_mean) << " "
          << detail::format_double(r.pixel_std) << " "
          << detail::format_double(r.channel_mean) << " "
          << detail::format_double(r.channel_std) << " "
          << detail::format_double(r.probe_mean) << " "
          << detail::format_double(r.probe_std) << "\n";
  }
  return rows;
}

}  // namespace srl
