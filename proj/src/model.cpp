#include "cgh/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace cgh {

// ------------------------------------------------------------------ HypercolumnHead

HypercolumnHead HypercolumnHead::make(const BackboneSpec& spec,
                                      const std::vector<int>& layer_set,
                                      int64_t out_dim, Rng& rng) {
  if (layer_set.empty()) throw std::invalid_argument("hypercolumn layer-set is empty");
  if (std::find(layer_set.begin(), layer_set.end(), 4) == layer_set.end())
    throw std::invalid_argument("hypercolumn layer-set must contain block 4");
  HypercolumnHead head;
  head.layer_set = layer_set;
  std::sort(head.layer_set.begin(), head.layer_set.end());
  for (int l : head.layer_set)
    head.concat_channels += spec.stage_channels[static_cast<size_t>(l - 1)];
  head.mix = Conv2d::make(head.concat_channels, out_dim, 1, 1, 0, rng);
  head.bn = BatchNorm2d::make(out_dim);
  return head;
}

Tensor HypercolumnHead::concat_aligned(const FeatureMaps& maps, Mode mode) {
  const Tensor& last = maps.stage[3];
  const int64_t n = last.dim(0), th = last.dim(2), tw = last.dim(3);
  Tensor concat({n, concat_channels, th, tw});
  if (mode == Mode::train) {
    cached_in_hw.clear();
    cached_concat_shape = concat.shape;
  }

  int64_t ch_offset = 0;
  for (int l : layer_set) {
    const Tensor& map = maps.stage[static_cast<size_t>(l - 1)];
    const int64_t c = map.dim(1), h = map.dim(2), w = map.dim(3);
    if (h < th || w < tw)
      throw std::invalid_argument("stage map smaller than the last-stage resolution");
    if (mode == Mode::train) cached_in_hw.push_back({h, w});

    const float* src = map.ptr();
    std::vector<float> pooled;
    if (h != th || w != tw) {
      pooled.resize(static_cast<size_t>(n * c * th * tw));
      kernels::adaptive_avgpool_forward(map.ptr(), pooled.data(), n, c, h, w, th, tw);
      src = pooled.data();
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t in = 0; in < n; ++in)
      for (int64_t cc = 0; cc < c; ++cc)
        std::copy(src + (in * c + cc) * th * tw, src + (in * c + cc + 1) * th * tw,
                  concat.ptr() + ((in * concat_channels + ch_offset + cc) * th) * tw);
    ch_offset += c;
  }
  return concat;
}

Tensor HypercolumnHead::forward(const FeatureMaps& maps, Mode mode) {
  Tensor x = concat_aligned(maps, mode);
  Tensor h = mix.forward(x, mode);
  h = bn.forward(h, mode);
  h = relu.forward(h, mode);
  return gap.forward(h, mode);
}

void HypercolumnHead::backward(const Tensor& d_out, FeatureMaps& stage_grads) {
  Tensor g = gap.backward(d_out);
  g = relu.backward(g);
  g = bn.backward(g);
  Tensor d_concat = mix.backward(g);

  const int64_t n = cached_concat_shape[0];
  const int64_t th = cached_concat_shape[2], tw = cached_concat_shape[3];
  int64_t ch_offset = 0;
  for (size_t li = 0; li < layer_set.size(); ++li) {
    const int l = layer_set[li];
    const auto [h, w] = cached_in_hw[li];
    Tensor& target = stage_grads.stage[static_cast<size_t>(l - 1)];
    const int64_t c = target.dim(1);

    // Slice this layer's channel block out of the concat gradient.
    Tensor block({n, c, th, tw});
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t in = 0; in < n; ++in)
      for (int64_t cc = 0; cc < c; ++cc)
        std::copy(d_concat.ptr() + ((in * concat_channels + ch_offset + cc) * th) * tw,
                  d_concat.ptr() + ((in * concat_channels + ch_offset + cc) * th) * tw +
                      th * tw,
                  block.ptr() + (in * c + cc) * th * tw);

    if (h != th || w != tw) {
      Tensor up({n, c, h, w});
      kernels::adaptive_avgpool_backward(block.ptr(), up.ptr(), n, c, h, w, th, tw);
      kernels::add_inplace(target.ptr(), up.ptr(), target.numel());
    } else {
      kernels::add_inplace(target.ptr(), block.ptr(), target.numel());
    }
    ch_offset += c;
  }
}

void HypercolumnHead::visit(const std::string& prefix, ParamList& out) {
  mix.visit(prefix + ".mix", out);
  bn.visit(prefix + ".bn", out);
}

// ------------------------------------------------------------------ EncoderTower

EncoderTower::Features EncoderTower::forward_features(const Tensor& x, Mode mode) {
  Features f;
  f.maps = backbone.forward(x, mode);
  f.global_ctx = gap.forward(f.maps.stage[3], mode);
  return f;
}

Tensor EncoderTower::hypercolumn_context(const FeatureMaps& maps, Mode mode) {
  if (!hyper) throw std::logic_error("this tower has no hypercolumn head");
  return hyper->forward(maps, mode);
}

EncoderTower::Embeddings EncoderTower::forward(const Tensor& x, Mode mode) {
  Features f = forward_features(x, mode);
  Embeddings e;
  e.global = proj_global.forward(f.global_ctx, mode);
  if (hyper) e.hyper = proj_hyper->forward(hyper->forward(f.maps, mode), mode);
  return e;
}

void EncoderTower::visit(const std::string& prefix, ParamList& out) {
  backbone.visit(prefix + ".backbone", out);
  if (hyper) hyper->visit(prefix + ".hyper", out);
  proj_global.visit(prefix + ".proj_global", out);
  if (proj_hyper) proj_hyper->visit(prefix + ".proj_hyper", out);
}

// ------------------------------------------------------------------ CghModel

CghModel CghModel::build(const TrainConfig& cfg, int64_t in_channels) {
  CghModel m;
  m.variant = context_variant_from_string(cfg.context_variant);
  const BackboneSpec& spec = backbone_spec(cfg.backbone);
  Rng rng = Rng::derive(cfg.seed, "model-init");

  auto build_tower = [&](EncoderTower& tower) {
    tower.backbone = Backbone::make(spec, in_channels, rng);
    tower.proj_global =
        ProjectionMlp::make(spec.stage_channels[3], cfg.hidden_dim, cfg.embed_dim, rng);
    if (m.variant != ContextVariant::global) {
      tower.hyper.emplace(
          HypercolumnHead::make(spec, cfg.layer_set, cfg.hypercolumn_dim, rng));
      tower.proj_hyper.emplace(
          ProjectionMlp::make(cfg.hypercolumn_dim, cfg.hidden_dim, cfg.embed_dim, rng));
    }
  };
  build_tower(m.student);
  build_tower(m.teacher);

  if (cfg.use_predictor) {
    m.pred_global.emplace(
        ProjectionMlp::make(cfg.embed_dim, cfg.hidden_dim, cfg.embed_dim, rng));
    if (m.variant != ContextVariant::global)
      m.pred_hyper.emplace(
          ProjectionMlp::make(cfg.embed_dim, cfg.hidden_dim, cfg.embed_dim, rng));
  }

  // The teacher starts as an exact copy of the student.
  copy_params(m.student_tower_params(), m.teacher_params());
  return m;
}

EncoderTower::Embeddings CghModel::forward_student(const Tensor& contrastive_view) {
  auto e = student.forward(contrastive_view, Mode::train);
  if (pred_global) e.global = pred_global->forward(e.global, Mode::train);
  if (pred_hyper && e.hyper.defined()) e.hyper = pred_hyper->forward(e.hyper, Mode::train);
  return e;
}

EncoderTower::Embeddings CghModel::forward_teacher(const Tensor& weak_view) {
  return teacher.forward(weak_view, Mode::target);
}

void CghModel::backward_student(const Tensor& d_global, const Tensor& d_hyper) {
  Tensor dg = d_global;
  if (pred_global) dg = pred_global->backward(dg);
  Tensor d_global_ctx = student.proj_global.backward(dg);

  FeatureMaps stage_grads;
  const auto& maps_shapes = student.backbone;  // shapes come from the cached maps
  (void)maps_shapes;
  // Initialize per-stage gradient accumulators with the cached forward shapes.
  for (size_t s = 0; s < 4; ++s) {
    const Tensor& ref = student.backbone.stages[s].back().relu2.cached_x;
    stage_grads.stage[s] = Tensor::zeros(ref.shape);
  }

  // Global head: GAP gradient flows into the stage-4 map.
  Tensor d_map4 = student.gap.backward(d_global_ctx);
  kernels::add_inplace(stage_grads.stage[3].ptr(), d_map4.ptr(), d_map4.numel());

  if (d_hyper.defined()) {
    Tensor dh = d_hyper;
    if (pred_hyper) dh = pred_hyper->backward(dh);
    Tensor d_hyper_ctx = student.proj_hyper->backward(dh);
    student.hyper->backward(d_hyper_ctx, stage_grads);
  }

  student.backbone.backward(stage_grads);
}

ParamList CghModel::student_params() {
  ParamList out;
  student.visit("student", out);
  if (pred_global) pred_global->visit("student.pred_global", out);
  if (pred_hyper) pred_hyper->visit("student.pred_hyper", out);
  return out;
}

ParamList CghModel::teacher_params() {
  ParamList out;
  teacher.visit("teacher", out);
  return out;
}

ParamList CghModel::student_tower_params() {
  ParamList out;
  student.visit("student", out);
  return out;
}

void copy_params(const ParamList& src, const ParamList& dst) {
  if (src.size() != dst.size())
    throw std::logic_error("copy_params: parameter lists differ in length");
  for (size_t i = 0; i < src.size(); ++i) {
    if (!src[i].value->same_shape(*dst[i].value))
      throw std::logic_error("copy_params: shape mismatch at " + src[i].name);
    dst[i].value->data = src[i].value->data;
  }
}

void ema_update(const ParamList& teacher, const ParamList& student, double m) {
  if (m < 0.0 || m > 1.0) throw std::invalid_argument("ema coefficient must be in [0,1]");
  if (teacher.size() != student.size())
    throw std::logic_error("ema_update: parameter trees are not shape-isomorphic");
  for (size_t i = 0; i < teacher.size(); ++i) {
    if (!teacher[i].value->same_shape(*student[i].value))
      throw std::logic_error("ema_update: shape mismatch at " + teacher[i].name);
    kernels::ema_update(teacher[i].value->ptr(), student[i].value->ptr(),
                        static_cast<float>(m), teacher[i].value->numel());
  }
}

}  // namespace cgh
