#include "cgh/modules.hpp"

#include <cmath>
#include <stdexcept>

namespace cgh {

namespace {

void ensure_grad(Tensor& grad, const Tensor& like) {
  if (!grad.defined()) grad = Tensor::zeros(like.shape);
}

void check_4d(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw std::invalid_argument(std::string(who) + ": expected NCHW input");
}

}  // namespace

// ------------------------------------------------------------------ Conv2d

Conv2d Conv2d::make(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                    int64_t pad, Rng& rng) {
  Conv2d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  const float stddev = std::sqrt(2.0f / static_cast<float>(out_ch * k * k));
  c.weight = Tensor::randn({out_ch, in_ch, k, k}, rng, stddev);
  return c;
}

Tensor Conv2d::forward(const Tensor& x, Mode mode) {
  check_4d(x, "Conv2d");
  if (x.dim(1) != in_ch)
    throw std::invalid_argument("Conv2d: channel mismatch, got " + x.shape_str());
  const auto s = kernels::make_conv_shape(x.dim(0), in_ch, x.dim(2), x.dim(3),
                                          out_ch, k, stride, pad);
  Tensor y({s.n, s.co, s.ho, s.wo});
  kernels::conv2d_forward(x.ptr(), weight.ptr(), y.ptr(), s);
  if (mode == Mode::train) cached_x = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool want_dx) {
  const auto s = kernels::make_conv_shape(cached_x.dim(0), in_ch, cached_x.dim(2),
                                          cached_x.dim(3), out_ch, k, stride, pad);
  ensure_grad(grad_weight, weight);
  kernels::conv2d_backward_weight(cached_x.ptr(), dy.ptr(), grad_weight.ptr(), s);
  if (!want_dx) return Tensor();
  Tensor dx(cached_x.shape);
  kernels::conv2d_backward_input(dy.ptr(), weight.ptr(), dx.ptr(), s);
  return dx;
}

void Conv2d::visit(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight, &grad_weight, true});
}

// ------------------------------------------------------------------ BatchNorm2d

BatchNorm2d BatchNorm2d::make(int64_t channels) {
  BatchNorm2d bn;
  bn.channels = channels;
  bn.gamma = Tensor::full({channels}, 1.0f);
  bn.beta = Tensor::zeros({channels});
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::full({channels}, 1.0f);
  return bn;
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  check_4d(x, "BatchNorm2d");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c != channels) throw std::invalid_argument("BatchNorm2d: channel mismatch");
  Tensor y(x.shape);
  if (mode == Mode::eval) {
    kernels::bn_forward_eval(x.ptr(), gamma.ptr(), beta.ptr(), running_mean.ptr(),
                             running_var.ptr(), eps, y.ptr(), n, c, hw);
    return y;
  }
  if (!save_mean.defined()) {
    save_mean = Tensor::zeros({channels});
    save_invstd = Tensor::zeros({channels});
  }
  const bool update_running = mode == Mode::train;
  kernels::bn_forward_train(x.ptr(), gamma.ptr(), beta.ptr(), y.ptr(), save_mean.ptr(),
                            save_invstd.ptr(), running_mean.ptr(), running_var.ptr(),
                            update_running, momentum, eps, n, c, hw);
  if (mode == Mode::train) cached_x = x;
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const int64_t n = cached_x.dim(0), c = cached_x.dim(1),
                hw = cached_x.dim(2) * cached_x.dim(3);
  ensure_grad(grad_gamma, gamma);
  ensure_grad(grad_beta, beta);
  Tensor dx(cached_x.shape);
  kernels::bn_backward(cached_x.ptr(), dy.ptr(), gamma.ptr(), save_mean.ptr(),
                       save_invstd.ptr(), dx.ptr(), grad_gamma.ptr(), grad_beta.ptr(),
                       n, c, hw);
  return dx;
}

void BatchNorm2d::visit(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".gamma", &gamma, &grad_gamma, true});
  out.push_back({prefix + ".beta", &beta, &grad_beta, true});
  out.push_back({prefix + ".running_mean", &running_mean, nullptr, false});
  out.push_back({prefix + ".running_var", &running_var, nullptr, false});
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, Mode mode) {
  Tensor y(x.shape);
  kernels::relu_forward(x.ptr(), y.ptr(), x.numel());
  if (mode == Mode::train) cached_x = x;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
  Tensor dx(cached_x.shape);
  kernels::relu_backward(cached_x.ptr(), dy.ptr(), dx.ptr(), cached_x.numel());
  return dx;
}

// ------------------------------------------------------------------ Linear

Linear Linear::make(int64_t in_dim, int64_t out_dim, Rng& rng) {
  Linear l;
  l.in_dim = in_dim;
  l.out_dim = out_dim;
  const float stddev = 1.0f / std::sqrt(static_cast<float>(in_dim));
  l.weight = Tensor::randn({out_dim, in_dim}, rng, stddev);
  l.bias = Tensor::zeros({out_dim});
  return l;
}

Tensor Linear::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 2 || x.dim(1) != in_dim)
    throw std::invalid_argument("Linear: expected [N," + std::to_string(in_dim) +
                                "] input, got " + x.shape_str());
  Tensor y({x.dim(0), out_dim});
  kernels::linear_forward(x.ptr(), weight.ptr(), bias.ptr(), y.ptr(), x.dim(0), in_dim,
                          out_dim);
  if (mode == Mode::train) cached_x = x;
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  ensure_grad(grad_weight, weight);
  ensure_grad(grad_bias, bias);
  const int64_t n = cached_x.dim(0);
  kernels::linear_backward_weight(cached_x.ptr(), dy.ptr(), grad_weight.ptr(),
                                  grad_bias.ptr(), n, in_dim, out_dim);
  Tensor dx(cached_x.shape);
  kernels::linear_backward_input(dy.ptr(), weight.ptr(), dx.ptr(), n, in_dim, out_dim);
  return dx;
}

void Linear::visit(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".weight", &weight, &grad_weight, true});
  out.push_back({prefix + ".bias", &bias, &grad_bias, true});
}

// ------------------------------------------------------------------ pooling

Tensor MaxPool2d::forward(const Tensor& x, Mode mode) {
  check_4d(x, "MaxPool2d");
  const int64_t oh = kernels::conv_out_dim(x.dim(2), k, stride, pad);
  const int64_t ow = kernels::conv_out_dim(x.dim(3), k, stride, pad);
  Tensor y({x.dim(0), x.dim(1), oh, ow});
  if (mode == Mode::train) {
    argmax.assign(static_cast<size_t>(y.numel()), -1);
    in_shape = x.shape;
    kernels::maxpool_forward(x.ptr(), y.ptr(), argmax.data(), x.dim(0), x.dim(1),
                             x.dim(2), x.dim(3), k, stride, pad);
  } else {
    std::vector<int64_t> scratch(static_cast<size_t>(y.numel()));
    kernels::maxpool_forward(x.ptr(), y.ptr(), scratch.data(), x.dim(0), x.dim(1),
                             x.dim(2), x.dim(3), k, stride, pad);
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) const {
  Tensor dx(in_shape);
  kernels::maxpool_backward(dy.ptr(), argmax.data(), dx.ptr(), in_shape[0], in_shape[1],
                            in_shape[2], in_shape[3], k, stride, pad);
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Mode mode) {
  check_4d(x, "GlobalAvgPool");
  Tensor y({x.dim(0), x.dim(1)});
  kernels::global_avgpool_forward(x.ptr(), y.ptr(), x.dim(0), x.dim(1),
                                  x.dim(2) * x.dim(3));
  if (mode == Mode::train) in_shape = x.shape;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) const {
  Tensor dx(in_shape);
  kernels::global_avgpool_backward(dy.ptr(), dx.ptr(), in_shape[0], in_shape[1],
                                   in_shape[2] * in_shape[3]);
  return dx;
}

// ------------------------------------------------------------------ L2Normalize

Tensor L2Normalize::forward(const Tensor& x, Mode mode) {
  if (x.rank() != 2) throw std::invalid_argument("L2Normalize: expected [N,D] input");
  Tensor y(x.shape);
  Tensor norms({x.dim(0)});
  kernels::l2normalize_rows(x.ptr(), y.ptr(), norms.ptr(), x.dim(0), x.dim(1));
  if (mode == Mode::train) {
    cached_y = y;
    cached_norms = norms;
  }
  return y;
}

Tensor L2Normalize::backward(const Tensor& dy) const {
  Tensor dx(cached_y.shape);
  kernels::l2normalize_rows_backward(cached_y.ptr(), cached_norms.ptr(), dy.ptr(),
                                     dx.ptr(), cached_y.dim(0), cached_y.dim(1));
  return dx;
}

// ------------------------------------------------------------------ ProjectionMlp

ProjectionMlp ProjectionMlp::make(int64_t in_dim, int64_t hidden_dim, int64_t out_dim,
                                  Rng& rng) {
  ProjectionMlp p;
  p.fc1 = Linear::make(in_dim, hidden_dim, rng);
  p.fc2 = Linear::make(hidden_dim, out_dim, rng);
  return p;
}

Tensor ProjectionMlp::forward(const Tensor& x, Mode mode) {
  Tensor h = fc1.forward(x, mode);
  h = relu.forward(h, mode);
  h = fc2.forward(h, mode);
  return norm.forward(h, mode);
}

Tensor ProjectionMlp::backward(const Tensor& dy) {
  Tensor g = norm.backward(dy);
  g = fc2.backward(g);
  g = relu.backward(g);
  return fc1.backward(g);
}

void ProjectionMlp::visit(const std::string& prefix, ParamList& out) {
  fc1.visit(prefix + ".fc1", out);
  fc2.visit(prefix + ".fc2", out);
}

// ------------------------------------------------------------------ helpers

void zero_grads(const ParamList& params) {
  for (const auto& p : params)
    if (p.trainable && p.grad && p.grad->defined()) p.grad->zero_();
}

uint64_t hash_params(const ParamList& params) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& p : params) {
    h = fnv1a64(p.name, h);
    h = fnv1a64(p.value->data.data(), p.value->data.size() * sizeof(float), h);
  }
  return h;
}

}  // namespace cgh
