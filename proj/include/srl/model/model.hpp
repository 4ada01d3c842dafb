#pragma once

#include <string>
#include <vector>

#include "srl/config.hpp"
#include "srl/core/rng.hpp"
#include "srl/model/heads.hpp"
#include "srl/model/vit.hpp"

namespace srl {

/// A full branch: ViT backbone plus all heads. The trainer holds two of
/// these (student theta_1 and teacher theta_2).
template <typename T>
struct Model {
  VitParams<T> vit;
  Heads<T> heads;

  static Model init(const TrainConfig& cfg, Rng& rng) {
    ViTConfig vc;
    vc.image_size = cfg.model_image_size;
    vc.patch_size = cfg.model_patch_size;
    vc.embed_dim = cfg.model_embed_dim;
    vc.depth = cfg.model_depth;
    vc.attn_heads = cfg.model_attn_heads;
    vc.mlp_ratio = cfg.model_mlp_ratio;
    vc.pos_embed = cfg.model_pos_embed;
    Model m;
    m.vit = VitParams<T>::init(vc, rng);
    m.heads = Heads<T>::init(cfg.model_embed_dim, cfg.losses_image_hidden,
                             cfg.losses_image_bottleneck, cfg.losses_prototypes,
                             rng);
    return m;
  }

  template <typename F>
  void visit(F&& f) {
    vit.visit(f);
    heads.visit(f);
  }

  template <typename F>
  void visit_stats(F&& f) {
    heads.visit_stats(f);
  }

  /// Marks every parameter as a tracked leaf (student branch).
  void mark_params() {
    visit([](const std::string&, Array<T>& a) { a.set_param(); });
  }

  std::vector<Array<T>*> parameters() {
    std::vector<Array<T>*> out;
    visit([&out](const std::string&, Array<T>& a) { out.push_back(&a); });
    return out;
  }

  std::vector<std::string> parameter_names() {
    std::vector<std::string> out;
    visit([&out](const std::string& n, Array<T>&) { out.push_back(n); });
    return out;
  }
};

/// teacher <- deep value copy of student (parameters and running stats).
template <typename T>
void copy_model_values(Model<T>& dst, Model<T>& src) {
  auto d = dst.parameters();
  auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) d[i]->values() = s[i]->values();
  std::vector<std::vector<T>*> ds, ss;
  dst.visit_stats([&ds](const std::string&, std::vector<T>& v) { ds.push_back(&v); });
  src.visit_stats([&ss](const std::string&, std::vector<T>& v) { ss.push_back(&v); });
  for (std::size_t i = 0; i < ds.size(); ++i) *ds[i] = *ss[i];
}

/// EMA update theta_2 = lambda * theta_2 + (1 - lambda) * theta_1 over every
/// teacher parameter (heads included); batch-norm running statistics are
/// copied from the student.
template <typename T>
void momentum_update(Model<T>& teacher, Model<T>& student, double lambda) {
  auto tp = teacher.parameters();
  auto sp = student.parameters();
  if (tp.size() != sp.size())
    throw ValueError("momentum_update: parameter lists differ");
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]->shape() != sp[i]->shape())
      throw ValueError("momentum_update: shape mismatch at parameter " +
                       std::to_string(i));
    T* t = tp[i]->data();
    const T* s = sp[i]->data();
    for (std::size_t j = 0; j < tp[i]->numel(); ++j)
      t[j] = static_cast<T>(lambda * static_cast<double>(t[j]) +
                            (1.0 - lambda) * static_cast<double>(s[j]));
  }
  std::vector<std::vector<T>*> ts, ss;
  teacher.visit_stats([&ts](const std::string&, std::vector<T>& v) { ts.push_back(&v); });
  student.visit_stats([&ss](const std::string&, std::vector<T>& v) { ss.push_back(&v); });
  for (std::size_t i = 0; i < ts.size(); ++i) *ts[i] = *ss[i];
}

}  // namespace srl
