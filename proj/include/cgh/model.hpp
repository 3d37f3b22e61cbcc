#pragma once

#include <optional>

#include "cgh/backbone.hpp"
#include "cgh/config.hpp"
#include "cgh/distill.hpp"

namespace cgh {

// Mixes the spatially aligned concatenation of the selected stage maps down
// to a single d-dimensional vector: adaptive-average-downsample each selected
// map to the last stage's resolution, concatenate along channels, then
// 1x1 conv -> BN -> ReLU -> global average pooling.
struct HypercolumnHead {
  std::vector<int> layer_set;  // 1-based stage indices, always contains 4
  int64_t concat_channels = 0;
  Conv2d mix;
  BatchNorm2d bn;
  ReLU relu;
  GlobalAvgPool gap;

  // caches for backward
  std::vector<std::array<int64_t, 2>> cached_in_hw;  // per selected layer
  std::vector<int64_t> cached_concat_shape;

  static HypercolumnHead make(const BackboneSpec& spec, const std::vector<int>& layer_set,
                              int64_t out_dim, Rng& rng);

  // Stand-alone concat step, exposed for shape/arithmetic tests.
  Tensor concat_aligned(const FeatureMaps& maps, Mode mode);

  Tensor forward(const FeatureMaps& maps, Mode mode);  // -> [N, d]
  // Accumulates per-stage input gradients into `stage_grads`.
  void backward(const Tensor& d_out, FeatureMaps& stage_grads);
  void visit(const std::string& prefix, ParamList& out);
};

// One encoder role (student or teacher): backbone + global pooling +
// hypercolumn head + the two projectors.
struct EncoderTower {
  Backbone backbone;
  GlobalAvgPool gap;
  std::optional<HypercolumnHead> hyper;  // absent for the global-only variant
  ProjectionMlp proj_global;
  std::optional<ProjectionMlp> proj_hyper;

  struct Features {
    FeatureMaps maps;
    Tensor global_ctx;  // [N, C4], channelwise mean of the stage-4 map
  };
  Features forward_features(const Tensor& x, Mode mode);
  Tensor hypercolumn_context(const FeatureMaps& maps, Mode mode);  // [N, d]

  struct Embeddings {
    Tensor global;  // [N, embed_dim], unit rows
    Tensor hyper;   // [N, embed_dim] or undefined
  };
  Embeddings forward(const Tensor& x, Mode mode);

  void visit(const std::string& prefix, ParamList& out);
};

// Full student/teacher pair plus the optional student-side predictors.
struct CghModel {
  ContextVariant variant = ContextVariant::cross;
  EncoderTower student;
  EncoderTower teacher;
  std::optional<ProjectionMlp> pred_global;
  std::optional<ProjectionMlp> pred_hyper;

  static CghModel build(const TrainConfig& cfg, int64_t in_channels = 3);

  EncoderTower::Embeddings forward_student(const Tensor& contrastive_view);
  EncoderTower::Embeddings forward_teacher(const Tensor& weak_view);

  // Backpropagates the embedding gradients through the whole student branch.
  void backward_student(const Tensor& d_global, const Tensor& d_hyper);

  ParamList student_params();  // includes predictors
  ParamList teacher_params();
  // EMA pairs: the teacher tower mirrors the student tower (no predictors).
  ParamList student_tower_params();
};

void copy_params(const ParamList& src, const ParamList& dst);

// t <- m*t + (1-m)*s for every tensor pair, including BN running statistics.
// Parameter lists must be shape-isomorphic.
void ema_update(const ParamList& teacher, const ParamList& student, double m);

}  // namespace cgh
