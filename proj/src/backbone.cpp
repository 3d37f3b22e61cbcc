#include "cgh/backbone.hpp"

#include <map>
#include <stdexcept>

#include "cgh/config.hpp"

namespace cgh {

namespace {

const std::map<std::string, BackboneSpec>& registry() {
  static const std::map<std::string, BackboneSpec> specs = {
      {"resnet18", {"resnet18", 64, {64, 128, 256, 512}, {2, 2, 2, 2}}},
      {"resnet10", {"resnet10", 64, {64, 128, 256, 512}, {1, 1, 1, 1}}},
      // Narrow variants for fast desk-scale sweeps and tests.
      {"resnet10-w32", {"resnet10-w32", 32, {32, 64, 128, 256}, {1, 1, 1, 1}}},
      {"resnet10-w16", {"resnet10-w16", 16, {16, 32, 64, 128}, {1, 1, 1, 1}}},
      {"resnet10-w8", {"resnet10-w8", 8, {8, 16, 32, 64}, {1, 1, 1, 1}}},
  };
  return specs;
}

}  // namespace

const BackboneSpec& backbone_spec(const std::string& id) {
  const auto it = registry().find(id);
  if (it == registry().end()) throw std::invalid_argument("unknown backbone '" + id + "'");
  return it->second;
}

std::vector<std::string> known_backbones() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

// ------------------------------------------------------------------ BasicBlock

BasicBlock BasicBlock::make(int64_t in_ch, int64_t out_ch, int64_t stride, Rng& rng) {
  BasicBlock b;
  b.conv1 = Conv2d::make(in_ch, out_ch, 3, stride, 1, rng);
  b.bn1 = BatchNorm2d::make(out_ch);
  b.conv2 = Conv2d::make(out_ch, out_ch, 3, 1, 1, rng);
  b.bn2 = BatchNorm2d::make(out_ch);
  if (stride != 1 || in_ch != out_ch) {
    b.down_conv = Conv2d::make(in_ch, out_ch, 1, stride, 0, rng);
    b.down_bn = BatchNorm2d::make(out_ch);
  }
  return b;
}

Tensor BasicBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = conv1.forward(x, mode);
  h = bn1.forward(h, mode);
  h = relu1.forward(h, mode);
  h = conv2.forward(h, mode);
  h = bn2.forward(h, mode);
  Tensor shortcut;
  if (down_conv) {
    shortcut = down_conv->forward(x, mode);
    shortcut = down_bn->forward(shortcut, mode);
  } else {
    shortcut = x;
  }
  kernels::add_inplace(h.ptr(), shortcut.ptr(), h.numel());
  return relu2.forward(h, mode);
}

Tensor BasicBlock::backward(const Tensor& dy) {
  Tensor dsum = relu2.backward(dy);

  Tensor g = bn2.backward(dsum);
  g = conv2.backward(g);
  g = relu1.backward(g);
  g = bn1.backward(g);
  Tensor dx = conv1.backward(g);

  if (down_conv) {
    Tensor ds = down_bn->backward(dsum);
    ds = down_conv->backward(ds);
    kernels::add_inplace(dx.ptr(), ds.ptr(), dx.numel());
  } else {
    kernels::add_inplace(dx.ptr(), dsum.ptr(), dx.numel());
  }
  return dx;
}

void BasicBlock::visit(const std::string& prefix, ParamList& out) {
  conv1.visit(prefix + ".conv1", out);
  bn1.visit(prefix + ".bn1", out);
  conv2.visit(prefix + ".conv2", out);
  bn2.visit(prefix + ".bn2", out);
  if (down_conv) {
    down_conv->visit(prefix + ".down_conv", out);
    down_bn->visit(prefix + ".down_bn", out);
  }
}

// ------------------------------------------------------------------ Backbone

Backbone Backbone::make(const BackboneSpec& spec, int64_t in_channels, Rng& rng) {
  Backbone net;
  net.spec = spec;
  net.stem_conv = Conv2d::make(in_channels, spec.stem_channels, 3, 2, 1, rng);
  net.stem_bn = BatchNorm2d::make(spec.stem_channels);
  net.stem_pool = MaxPool2d{3, 2, 1, {}, {}};
  int64_t ch = spec.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const int64_t out_ch = spec.stage_channels[static_cast<size_t>(s)];
    const int64_t stride = s == 0 ? 1 : 2;
    for (int64_t b = 0; b < spec.blocks_per_stage[static_cast<size_t>(s)]; ++b) {
      net.stages[static_cast<size_t>(s)].push_back(
          BasicBlock::make(ch, out_ch, b == 0 ? stride : 1, rng));
      ch = out_ch;
    }
  }
  return net;
}

FeatureMaps Backbone::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 4) throw std::invalid_argument("Backbone: expected NCHW input");
  if (x.dim(2) < 4 || x.dim(3) < 4)
    throw std::invalid_argument("Backbone: input smaller than the 4x stem downsampling");
  Tensor h = stem_conv.forward(x, mode);
  h = stem_bn.forward(h, mode);
  h = stem_relu.forward(h, mode);
  h = stem_pool.forward(h, mode);

  FeatureMaps maps;
  for (size_t s = 0; s < 4; ++s) {
    for (auto& block : stages[s]) h = block.forward(h, mode);
    maps.stage[s] = h;
  }
  return maps;
}

void Backbone::backward(FeatureMaps& stage_grads) {
  Tensor g;
  for (int s = 3; s >= 0; --s) {
    Tensor& external = stage_grads.stage[static_cast<size_t>(s)];
    if (!g.defined()) {
      g = std::move(external);
    } else if (external.defined()) {
      kernels::add_inplace(g.ptr(), external.ptr(), g.numel());
    }
    auto& blocks = stages[static_cast<size_t>(s)];
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
  }
  g = stem_pool.backward(g);
  g = stem_relu.backward(g);
  g = stem_bn.backward(g);
  stem_conv.backward(g, /*want_dx=*/false);
}

void Backbone::visit(const std::string& prefix, ParamList& out) {
  stem_conv.visit(prefix + ".stem.conv", out);
  stem_bn.visit(prefix + ".stem.bn", out);
  for (size_t s = 0; s < 4; ++s)
    for (size_t b = 0; b < stages[s].size(); ++b)
      stages[s][b].visit(prefix + ".stage" + std::to_string(s + 1) + ".block" +
                             std::to_string(b),
                         out);
}

}  // namespace cgh
