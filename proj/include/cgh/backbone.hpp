#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cgh/modules.hpp"

namespace cgh {

// Four-stage residual encoder. The stem downsamples 4x (conv s2 + maxpool s2)
// and each stage after the first halves the resolution, so a SxS input yields
// stage maps of S/4, S/8, S/16, S/32.
struct BackboneSpec {
  std::string id;
  int64_t stem_channels = 64;
  std::array<int64_t, 4> stage_channels{64, 128, 256, 512};
  std::array<int64_t, 4> blocks_per_stage{2, 2, 2, 2};
};

const BackboneSpec& backbone_spec(const std::string& id);

// Per-stage output maps (the four taps feeding the hypercolumn).
struct FeatureMaps {
  std::array<Tensor, 4> stage;
};

struct BasicBlock {
  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
  ReLU relu1, relu2;
  std::optional<Conv2d> down_conv;
  std::optional<BatchNorm2d> down_bn;
  Tensor cached_sum;  // pre-activation of the final ReLU

  static BasicBlock make(int64_t in_ch, int64_t out_ch, int64_t stride, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void visit(const std::string& prefix, ParamList& out);
};

struct Backbone {
  BackboneSpec spec;
  Conv2d stem_conv;
  BatchNorm2d stem_bn;
  ReLU stem_relu;
  MaxPool2d stem_pool;
  std::array<std::vector<BasicBlock>, 4> stages;

  static Backbone make(const BackboneSpec& spec, int64_t in_channels, Rng& rng);

  // Returns all four stage outputs. The global feature context is
  // global_pool(maps.stage[3]).
  FeatureMaps forward(const Tensor& x, Mode mode);

  // Takes per-stage output gradients (accumulated across all heads tapping
  // that stage) and backpropagates through the whole encoder. The input
  // gradient is not materialized.
  void backward(FeatureMaps& stage_grads);

  void visit(const std::string& prefix, ParamList& out);
  int64_t output_dim() const { return spec.stage_channels[3]; }
};

}  // namespace cgh
