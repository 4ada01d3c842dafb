#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "srl/config.hpp"
#include "srl/core/array.hpp"
#include "srl/core/optim.hpp"
#include "srl/core/serialize.hpp"
#include "srl/data/augment.hpp"
#include "srl/data/dataset.hpp"
#include "srl/data/image.hpp"
#include "srl/model/model.hpp"
#include "srl/train/losses.hpp"
#include "srl/train/schedule.hpp"

namespace srl {

// Stream tags for deriving independent RNG streams from train.seed.
inline constexpr std::uint64_t kStreamInit = 0x5eed0001;
inline constexpr std::uint64_t kStreamAugment = 0x5eed0002;
inline constexpr std::uint64_t kStreamShuffle = 0x5eed0003;

/// Network inputs are pixels mapped from [0, 1] to [-1, 1].
template <typename T>
Array<T> normalize_pixels(const Array<T>& pixels) {
  Array<T> out = Array<T>::zeros(pixels.shape());
  for (std::size_t i = 0; i < pixels.numel(); ++i)
    out.data()[i] = pixels.data()[i] * T(2) - T(1);
  return out;
}

/// Whole-image view (rect (0,0,1,1), no flip), bilinearly resized.
template <typename T>
View<T> make_identity_view(const Array<T>& image, int out_size) {
  AugConfig cfg;
  cfg.global_size = out_size;
  cfg.global_ratio_min = cfg.global_ratio_max = 1.0;
  cfg.aspect_min = cfg.aspect_max = 1.0;
  cfg.hflip_prob = 0.0;
  cfg.color_jitter_prob = cfg.grayscale_prob = cfg.blur_prob = 0.0;
  Rng rng(0);
  return sample_crop(image, CropKind::Global, cfg, rng);
}

inline AugConfig aug_config_from(const TrainConfig& c) {
  AugConfig a;
  a.global_size = c.aug_global_size;
  a.local_size = c.aug_local_size;
  a.n_local = c.aug_n_local;
  a.global_ratio_min = c.aug_global_ratio_min;
  a.global_ratio_max = c.aug_global_ratio_max;
  a.local_ratio_min = c.aug_local_ratio_min;
  a.local_ratio_max = c.aug_local_ratio_max;
  a.aspect_min = c.aug_aspect_min;
  a.aspect_max = c.aug_aspect_max;
  a.hflip_prob = c.aug_hflip_prob;
  a.color_jitter_prob = c.aug_color_jitter_prob;
  a.grayscale_prob = c.aug_grayscale_prob;
  a.blur_prob = c.aug_blur_prob;
  a.min_source_side = c.model_patch_size;
  return a;
}

/// Training loop: multi-crop forward through student and EMA teacher, summed
/// self-relation + image losses, AdamW on the student, momentum update of
/// the teacher. Deterministic under fixed seed and config.
template <typename T>
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg), settings_(LossSettings::from(cfg)), aug_(aug_config_from(cfg)) {
    cfg_.validate();
    Rng rng(mix64(static_cast<std::uint64_t>(cfg_.train_seed), kStreamInit));
    student_ = Model<T>::init(cfg_, rng);
    student_.mark_params();
    teacher_ = Model<T>::init(cfg_, rng);  // same shapes; values overwritten
    copy_model_values(teacher_, student_);
    params_ = student_.parameters();
    names_ = student_.parameter_names();
    AdamWConfig oc;
    oc.weight_decay = cfg_.train_weight_decay;
    opt_ = std::make_unique<AdamW<T>>(params_, oc);
    center_.assign(static_cast<std::size_t>(cfg_.losses_prototypes), T(0));
  }

  /// Loads every manifest image into memory.
  void set_dataset(const DatasetManifest& manifest) {
    images_.clear();
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      images_.push_back(load_image<T>(manifest.full_path(i)));
    if (static_cast<int>(images_.size()) < cfg_.train_batch_size)
      throw ValueError("dataset smaller than one batch (" +
                       std::to_string(images_.size()) + " images)");
  }

  std::int64_t steps_per_epoch() const {
    return static_cast<std::int64_t>(images_.size()) / cfg_.train_batch_size;
  }
  std::int64_t total_steps() const {
    return steps_per_epoch() * cfg_.train_epochs;
  }
  std::int64_t step_index() const { return step_; }

  double current_lr() const {
    return lr_schedule(step_, total_steps(), cfg_.peak_lr(), cfg_.train_lr_floor,
                       cfg_.train_warmup_frac);
  }
  double current_lambda() const {
    return lambda_schedule(step_, total_steps(), cfg_.train_ema_base);
  }

  /// One optimization step. Aborts (throws) on non-finite loss.
  LossReport train_step() {
    if (images_.empty()) throw ValueError("train_step: no dataset loaded");
    const std::int64_t spe = steps_per_epoch();
    const std::int64_t epoch = step_ / spe;
    const std::int64_t pos = step_ % spe;
    const std::vector<std::size_t> order = epoch_order(epoch);

    const double lr = current_lr();
    const double lambda = current_lambda();

    Tape<T> tape;
    LossReport report;
    {
      TapeScope<T> scope(tape);
      std::vector<View<T>> student_views;
      std::vector<View<T>> teacher_views;
      const int vpi = 2 + cfg_.aug_n_local;
      for (int b = 0; b < cfg_.train_batch_size; ++b) {
        const std::size_t idx = order[static_cast<std::size_t>(pos) * cfg_.train_batch_size + b];
        const std::uint64_t img_seed =
            mix64(mix64(mix64(static_cast<std::uint64_t>(cfg_.train_seed), kStreamAugment),
                        static_cast<std::uint64_t>(epoch)),
                  static_cast<std::uint64_t>(idx));
        auto views = make_views(images_[idx], aug_, img_seed);
        for (int v = 0; v < vpi; ++v) {
          views[static_cast<std::size_t>(v)].pixels =
              normalize_pixels(views[static_cast<std::size_t>(v)].pixels);
          student_views.push_back(views[static_cast<std::size_t>(v)]);
          if (v < 2) teacher_views.push_back(views[static_cast<std::size_t>(v)]);
        }
      }
      auto s_enc = encode_batch(student_.vit, student_views);
      auto t_enc = encode_batch(teacher_.vit, teacher_views);

      std::vector<ImageForward<T>> batch(static_cast<std::size_t>(cfg_.train_batch_size));
      for (int b = 0; b < cfg_.train_batch_size; ++b) {
        for (int v = 0; v < vpi; ++v)
          batch[static_cast<std::size_t>(b)].student.push_back(s_enc[static_cast<std::size_t>(b * vpi + v)]);
        for (int v = 0; v < 2; ++v)
          batch[static_cast<std::size_t>(b)].teacher.push_back(t_enc[static_cast<std::size_t>(b * 2 + v)]);
      }
      LossOutput<T> out = compute_total_loss(batch, student_.heads, teacher_.heads,
                                             center_, settings_, true, true);
      report = out.report;
      if (!std::isfinite(report.total))
        throw TrainError("non-finite loss at step " + std::to_string(step_));
      tape.backward(out.total);
    }

    clip_global_norm(params_, cfg_.train_clip_norm);
    opt_->step(lr);
    for (Array<T>* p : params_) p->zero_grad();
    momentum_update(teacher_, student_, lambda);
    ++step_;
    return report;
  }

  /// Full run: logs one line per step, writes periodic and final checkpoints.
  void run(const std::string& out_dir, bool quiet = false) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
      std::ofstream cfg_out(fs::path(out_dir) / "config_resolved.cfg",
                            std::ios::trunc);
      cfg_out << config_to_text(cfg_);
    }
    std::ofstream log(fs::path(out_dir) / "metrics.log", std::ios::app);
    if (!log) throw IoError("cannot open metrics log under " + out_dir);
    const std::int64_t total = total_steps();
    double epoch_loss = 0.0;
    std::int64_t epoch_steps = 0;
    while (step_ < total) {
      const double lr = current_lr();
      const double lambda = current_lambda();
      LossReport r = train_step();
      log << "step=" << step_ - 1 << " lr=" << detail::format_double(lr)
          << " lambda=" << detail::format_double(lambda)
          << " L_I=" << detail::format_double(r.image)
          << " L_p=" << detail::format_double(r.pixel)
          << " L_c=" << detail::format_double(r.channel)
          << " L=" << detail::format_double(r.total) << "\n";
      log.flush();
      epoch_loss += r.total;
      ++epoch_steps;
      if (step_ % steps_per_epoch() == 0) {
        const std::int64_t epoch = step_ / steps_per_epoch();
        if (!quiet)
          std::cout << "epoch " << epoch << "/" << cfg_.train_epochs
                    << " mean L=" << epoch_loss / static_cast<double>(epoch_steps)
                    << std::endl;
        epoch_loss = 0.0;
        epoch_steps = 0;
        if (cfg_.train_checkpoint_every > 0 &&
            epoch % cfg_.train_checkpoint_every == 0 && epoch < cfg_.train_epochs) {
          char name[64];
          std::snprintf(name, sizeof(name), "checkpoint_epoch%03lld.srlt",
                        static_cast<long long>(epoch));
          save_checkpoint((fs::path(out_dir) / name).string());
        }
      }
    }
    save_checkpoint((fs::path(out_dir) / "checkpoint_final.srlt").string());
  }

  void save_checkpoint(const std::string& path) {
    ContainerWriter w("SRLT", config_digest(cfg_));
    student_.visit([&w](const std::string& n, Array<T>& a) {
      w.add_array("student/" + n, a.shape(), a.values());
    });
    teacher_.visit([&w](const std::string& n, Array<T>& a) {
      w.add_array("teacher/" + n, a.shape(), a.values());
    });
    student_.visit_stats([&w](const std::string& n, std::vector<T>& v) {
      w.add_array("student_stats/" + n, {static_cast<int>(v.size())}, v);
    });
    teacher_.visit_stats([&w](const std::string& n, std::vector<T>& v) {
      w.add_array("teacher_stats/" + n, {static_cast<int>(v.size())}, v);
    });
    for (std::size_t i = 0; i < params_.size(); ++i) {
      w.add_array("opt_m/" + names_[i], params_[i]->shape(), opt_->moment1(i));
      w.add_array("opt_v/" + names_[i], params_[i]->shape(), opt_->moment2(i));
    }
    w.add_i64("opt/step_count", opt_->step_count());
    w.add_i64("trainer/step", step_);
    w.add_array("trainer/center", {static_cast<int>(center_.size())}, center_);
    w.add_text("config", config_to_text(cfg_));
    w.write(path);
  }

  /// Restores training state. Array shapes are validated entry by entry; the
  /// checkpoint's config digest must match this trainer's config.
  void load_checkpoint(const std::string& path) {
    ContainerReader r = ContainerReader::read(path, "SRLT");
    student_.visit([&r, &path](const std::string& n, Array<T>& a) {
      r.load_into("student/" + n, a.shape(), a.values());
      (void)path;
    });
    teacher_.visit([&r](const std::string& n, Array<T>& a) {
      r.load_into("teacher/" + n, a.shape(), a.values());
    });
    student_.visit_stats([&r](const std::string& n, std::vector<T>& v) {
      r.load_into("student_stats/" + n, {static_cast<int>(v.size())}, v);
    });
    teacher_.visit_stats([&r](const std::string& n, std::vector<T>& v) {
      r.load_into("teacher_stats/" + n, {static_cast<int>(v.size())}, v);
    });
    for (std::size_t i = 0; i < params_.size(); ++i) {
      r.load_into("opt_m/" + names_[i], params_[i]->shape(), opt_->moment1(i));
      r.load_into("opt_v/" + names_[i], params_[i]->shape(), opt_->moment2(i));
    }
    opt_->set_step_count(r.get_i64("opt/step_count"));
    step_ = r.get_i64("trainer/step");
    r.load_into("trainer/center", {static_cast<int>(center_.size())}, center_);
    if (r.digest() != config_digest(cfg_))
      throw IoError(path + ": checkpoint config digest mismatch");
    for (Array<T>* p : params_) p->zero_grad();
  }

  Model<T>& student() { return student_; }
  Model<T>& teacher() { return teacher_; }
  const TrainConfig& config() const { return cfg_; }
  std::vector<Array<T>*>& parameters() { return params_; }
  const std::vector<T>& center() const { return center_; }

 private:
  std::vector<std::size_t> epoch_order(std::int64_t epoch) const {
    std::vector<std::size_t> order(images_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix64(mix64(static_cast<std::uint64_t>(cfg_.train_seed), kStreamShuffle),
                  static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    return order;
  }

  TrainConfig cfg_;
  LossSettings settings_;
  AugConfig aug_;
  Model<T> student_, teacher_;
  std::vector<Array<T>*> params_;
  std::vector<std::string> names_;
  std::unique_ptr<AdamW<T>> opt_;
  std::vector<T> center_;
  std::vector<Array<T>> images_;
  std::int64_t step_ = 0;
};

/// Rebuilds the models recorded in a checkpoint (for evaluation commands).
template <typename T>
struct LoadedCheckpoint {
  TrainConfig cfg;
  Model<T> student;
  Model<T> teacher;
  std::int64_t step = 0;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint_models(const std::string& path) {
  ContainerReader r = ContainerReader::read(path, "SRLT");
  LoadedCheckpoint<T> out;
  out.cfg = config_from_text(r.get_text("config"));
  if (fnv1a64(r.get_text("config")) != r.digest())
    throw IoError(path + ": header digest does not match embedded config");
  Rng rng(0);  // values overwritten below
  out.student = Model<T>::init(out.cfg, rng);
  out.teacher = Model<T>::init(out.cfg, rng);
  out.student.visit([&r](const std::string& n, Array<T>& a) {
    r.load_into("student/" + n, a.shape(), a.values());
  });
  out.teacher.visit([&r](const std::string& n, Array<T>& a) {
    r.load_into("teacher/" + n, a.shape(), a.values());
  });
  out.student.visit_stats([&r](const std::string& n, std::vector<T>& v) {
    r.load_into("student_stats/" + n, {static_cast<int>(v.size())}, v);
  });
  out.teacher.visit_stats([&r](const std::string& n, std::vector<T>& v) {
    r.load_into("teacher_stats/" + n, {static_cast<int>(v.size())}, v);
  });
  out.step = r.get_i64("trainer/step");
  return out;
}

}  // namespace srl
