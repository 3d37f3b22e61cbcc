#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cgh/kernels.hpp"
#include "cgh/tensor.hpp"

namespace cgh {

// Forward mode.
//  train  : caches for backward; BN uses batch stats and updates running stats.
//  target : teacher forward. BN uses batch stats without touching running
//           stats (they are EMA-copied from the student instead); nothing is
//           cached and gradient buffers stay unallocated.
//  eval   : BN uses running stats; nothing is cached.
enum class Mode { train, target, eval };

struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;  // nullptr for buffers (running stats)
  bool trainable = false;
};

using ParamList = std::vector<ParamRef>;

struct Conv2d {
  int64_t in_ch = 0, out_ch = 0, k = 1, stride = 1, pad = 0;
  Tensor weight, grad_weight;
  Tensor cached_x;

  static Conv2d make(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                     int64_t pad, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  // Accumulates grad_weight; returns dx unless want_dx is false.
  Tensor backward(const Tensor& dy, bool want_dx = true);
  void visit(const std::string& prefix, ParamList& out);
};

struct BatchNorm2d {
  int64_t channels = 0;
  float momentum = 0.1f, eps = 1e-5f;
  Tensor gamma, beta, grad_gamma, grad_beta;
  Tensor running_mean, running_var;
  Tensor save_mean, save_invstd, cached_x;

  static BatchNorm2d make(int64_t channels);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void visit(const std::string& prefix, ParamList& out);
};

struct ReLU {
  Tensor cached_x;
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy) const;
};

struct Linear {
  int64_t in_dim = 0, out_dim = 0;
  Tensor weight, bias, grad_weight, grad_bias;
  Tensor cached_x;

  static Linear make(int64_t in_dim, int64_t out_dim, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void visit(const std::string& prefix, ParamList& out);
};

struct MaxPool2d {
  int64_t k = 3, stride = 2, pad = 1;
  std::vector<int64_t> argmax;
  std::vector<int64_t> in_shape;

  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy) const;
};

struct GlobalAvgPool {
  std::vector<int64_t> in_shape;
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy) const;
};

// Row-wise L2 normalization onto the unit sphere.
struct L2Normalize {
  Tensor cached_y, cached_norms;
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy) const;
};

// Two-layer MLP (linear -> ReLU -> linear) followed by L2 normalization.
// Used for both projectors and the optional predictor.
struct ProjectionMlp {
  Linear fc1, fc2;
  ReLU relu;
  L2Normalize norm;

  static ProjectionMlp make(int64_t in_dim, int64_t hidden_dim, int64_t out_dim, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  void visit(const std::string& prefix, ParamList& out);
};

// Zeroes every trainable gradient in the list (skips unallocated buffers).
void zero_grads(const ParamList& params);
uint64_t hash_params(const ParamList& params);

}  // namespace cgh
