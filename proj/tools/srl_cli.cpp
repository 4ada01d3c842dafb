// Command-line entry point: train / eval / visualize / ablate.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "srl/config.hpp"
#include "srl/data/prepare.hpp"
#include "srl/eval/ablation.hpp"
#include "srl/eval/evaluate.hpp"
#include "srl/train/trainer.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::int64_t> seed;
  std::string out = "runs/out";
};

srl::TrainConfig resolve_config(const CommonArgs& args) {
  srl::TrainConfig cfg;
  if (!args.config_path.empty()) srl::config_apply_file(cfg, args.config_path);
  for (const std::string& kv : args.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw srl::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    srl::config_set(cfg, srl::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (args.seed) cfg.train_seed = *args.seed;
  cfg.validate();
  return cfg;
}

void apply_eval_overrides(srl::TrainConfig& cfg, const CommonArgs& args) {
  for (const std::string& kv : args.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw srl::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    srl::config_set(cfg, srl::detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (args.seed) cfg.eval_seed = *args.seed;
}

template <typename T>
void load_split(const srl::DatasetManifest& man, std::vector<srl::Array<T>>& images,
                std::vector<int>& labels) {
  for (std::size_t i = 0; i < man.entries.size(); ++i) {
    images.push_back(srl::load_image<T>(man.full_path(i)));
    labels.push_back(man.entries[i].label);
  }
}

template <typename T>
int run_train(const srl::TrainConfig& cfg, const std::string& out_dir) {
  srl::DatasetSplits data = srl::ensure_dataset(cfg);
  srl::Trainer<T> trainer(cfg);
  trainer.set_dataset(data.train);
  trainer.run(out_dir);
  std::cout << "final checkpoint: " << out_dir << "/checkpoint_final.srlt"
            << std::endl;
  return 0;
}

template <typename T>
int run_eval(const std::string& checkpoint, const std::string& which,
             const CommonArgs& args) {
  srl::LoadedCheckpoint<T> ck = srl::load_checkpoint_models<T>(checkpoint);
  apply_eval_overrides(ck.cfg, args);
  srl::DatasetSplits data = srl::ensure_dataset(ck.cfg);
  std::filesystem::create_directories(args.out);
  if (which == "relations") {
    std::vector<srl::Array<T>> images;
    std::vector<int> labels;
    load_split(data.val.entries.empty() ? data.train : data.val, images, labels);
    srl::RelationDiffReport rep = srl::relation_difference(
        ck.student, ck.cfg, images, ck.cfg.eval_n_pairs,
        static_cast<std::uint64_t>(ck.cfg.eval_seed));
    std::ofstream f(std::filesystem::path(args.out) / "relations.txt",
                    std::ios::trunc);
    char digest_hex[32];
    std::snprintf(digest_hex, sizeof(digest_hex), "%016llx",
                  static_cast<unsigned long long>(rep.config_digest));
    f << "pairs " << rep.pairs << "\n"
      << "pixel_diff " << srl::detail::format_double(rep.pixel_diff) << "\n"
      << "channel_diff " << srl::detail::format_double(rep.channel_diff) << "\n"
      << "config_digest " << digest_hex << "\n";
    std::cout << "pixel_diff " << rep.pixel_diff << "  channel_diff "
              << rep.channel_diff << " (" << rep.pairs << " pairs)" << std::endl;
    return 0;
  }
  if (which == "probe") {
    if (data.val.entries.empty())
      throw srl::ValueError("probe needs a val split");
    std::vector<srl::Array<T>> tr_images, va_images;
    std::vector<int> tr_labels, va_labels;
    load_split(data.train, tr_images, tr_labels);
    load_split(data.val, va_images, va_labels);
    const double acc = srl::linear_probe(ck.student, ck.cfg, tr_images,
                                         tr_labels, va_images, va_labels);
    std::ofstream f(std::filesystem::path(args.out) / "probe.txt", std::ios::trunc);
    f << "top1 " << srl::detail::format_double(acc) << "\n";
    std::cout << "probe top-1 " << acc << std::endl;
    return 0;
  }
  throw srl::ConfigError("--which must be relations or probe, got '" + which + "'");
}

template <typename T>
int run_visualize(const std::string& checkpoint, const std::string& image_path,
                  const std::string& query, const std::string& out_file) {
  srl::LoadedCheckpoint<T> ck = srl::load_checkpoint_models<T>(checkpoint);
  srl::Array<T> image = srl::load_image<T>(image_path);
  srl::HeatmapQuery q;
  if (query.rfind("pixel:", 0) == 0) {
    q.kind = srl::RelationKind::Pixel;
    q.pixel_index = std::stoi(query.substr(6));
  } else if (query == "channel") {
    q.kind = srl::RelationKind::Channel;
  } else {
    throw srl::ConfigError("--query must be pixel:<index> or channel, got '" +
                           query + "'");
  }
  srl::export_relation_heatmap(ck.student, ck.cfg, image, q, out_file);
  std::cout << "wrote " << out_file << std::endl;
  return 0;
}

template <typename T>
int run_ablate(const srl::TrainConfig& cfg, const std::vector<std::string>& axis_specs,
               const std::string& seeds_arg, const std::string& out_dir) {
  std::vector<srl::AblationAxis> axes;
  for (const auto& s : axis_specs) axes.push_back(srl::parse_ablation_axis(s));
  std::vector<std::int64_t> seeds;
  std::size_t pos = 0;
  while (pos <= seeds_arg.size()) {
    const std::size_t c = seeds_arg.find(',', pos);
    seeds.push_back(std::stoll(seeds_arg.substr(pos, c == std::string::npos ? std::string::npos : c - pos)));
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  auto rows = srl::run_ablation<T>(cfg, srl::cross_axes(axes), seeds, out_dir, false);
  std::cout << rows.size() << " cells written to " << out_dir << "/results.txt"
            << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-relation self-supervised training engine"};
  app.require_subcommand(1);

  CommonArgs train_args, eval_args, vis_args, ablate_args;

  CLI::App* train = app.add_subcommand("train", "Pretrain on a dataset");
  train->add_option("--config", train_args.config_path, "Config file");
  train->add_option("--set", train_args.sets, "Override KEY=VALUE (repeatable)");
  train->add_option("--seed", train_args.seed, "Override train.seed");
  train->add_option("--out", train_args.out, "Output directory");

  std::string eval_ckpt, eval_which = "relations";
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--which", eval_which, "relations | probe");
  eval->add_option("--set", eval_args.sets, "Override KEY=VALUE (repeatable)");
  eval->add_option("--seed", eval_args.seed, "Override eval.seed");
  eval->add_option("--out", eval_args.out, "Output directory");

  std::string vis_ckpt, vis_image, vis_query = "pixel:0";
  std::string vis_out = "heatmap.ppm";
  CLI::App* vis = app.add_subcommand("visualize", "Export a relation heatmap");
  vis->add_option("--checkpoint", vis_ckpt, "Checkpoint path")->required();
  vis->add_option("--image", vis_image, "Input image (PNG or .srla)")->required();
  vis->add_option("--query", vis_query, "pixel:<index> | channel");
  vis->add_option("--out", vis_out, "Output image file (PPM)");

  std::vector<std::string> ablate_axes;
  std::string ablate_seeds = "0";
  CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  ablate->add_option("--config", ablate_args.config_path, "Config file");
  ablate->add_option("--set", ablate_args.sets, "Override KEY=VALUE (repeatable)");
  ablate->add_option("--axis", ablate_axes,
                     "Axis spec: M=..., temps=..., asymmetric=..., losses=... "
                     "(repeatable)");
  ablate->add_option("--seeds", ablate_seeds, "Comma-separated seed list");
  ablate->add_option("--seed", ablate_args.seed, "Override train.seed");
  ablate->add_option("--out", ablate_args.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      srl::TrainConfig cfg = resolve_config(train_args);
      return cfg.train_precision == "f64"
                 ? run_train<double>(cfg, train_args.out)
                 : run_train<float>(cfg, train_args.out);
    }
    if (eval->parsed()) {
      // Peek at the checkpoint's precision to pick the arithmetic type.
      srl::ContainerReader r = srl::ContainerReader::read(eval_ckpt, "SRLT");
      srl::TrainConfig cfg = srl::config_from_text(r.get_text("config"));
      return cfg.train_precision == "f64"
                 ? run_eval<double>(eval_ckpt, eval_which, eval_args)
                 : run_eval<float>(eval_ckpt, eval_which, eval_args);
    }
    if (vis->parsed()) {
      srl::ContainerReader r = srl::ContainerReader::read(vis_ckpt, "SRLT");
      srl::TrainConfig cfg = srl::config_from_text(r.get_text("config"));
      return cfg.train_precision == "f64"
                 ? run_visualize<double>(vis_ckpt, vis_image, vis_query, vis_out)
                 : run_visualize<float>(vis_ckpt, vis_image, vis_query, vis_out);
    }
    if (ablate->parsed()) {
      srl::TrainConfig cfg = resolve_config(ablate_args);
      return cfg.train_precision == "f64"
                 ? run_ablate<double>(cfg, ablate_axes, ablate_seeds, ablate_args.out)
                 : run_ablate<float>(cfg, ablate_axes, ablate_seeds, ablate_args.out);
    }
  } catch (const srl::ConfigError& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
