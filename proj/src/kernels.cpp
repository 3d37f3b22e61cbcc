#include "cgh/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace cgh::kernels {

int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

ConvShape make_conv_shape(int64_t n, int64_t ci, int64_t h, int64_t w, int64_t co,
                          int64_t k, int64_t stride, int64_t pad) {
  ConvShape s{n, ci, h, w, co, k, stride, pad, 0, 0};
  s.ho = conv_out_dim(h, k, stride, pad);
  s.wo = conv_out_dim(w, k, stride, pad);
  if (s.ho <= 0 || s.wo <= 0) throw std::invalid_argument("conv output would be empty");
  return s;
}

namespace detail {

// One (image, output-channel) slice of the convolution. Shared by the serial
// and parallel drivers so both produce bit-identical results.
template <typename T>
inline void conv_fwd_slice(const T* x, const T* w, T* y, const ConvShape& s,
                           int64_t in, int64_t co) {
  T* out = y + ((in * s.co + co) * s.ho) * s.wo;
  std::fill(out, out + s.ho * s.wo, T(0));
  const T* wbase = w + co * s.ci * s.k * s.k;
  for (int64_t ci = 0; ci < s.ci; ++ci) {
    const T* xc = x + ((in * s.ci + ci) * s.h) * s.w;
    const T* wc = wbase + ci * s.k * s.k;
    for (int64_t kh = 0; kh < s.k; ++kh) {
      for (int64_t kw = 0; kw < s.k; ++kw) {
        const T wv = wc[kh * s.k + kw];
        if (wv == T(0)) continue;
        for (int64_t oh = 0; oh < s.ho; ++oh) {
          const int64_t ih = oh * s.stride + kh - s.pad;
          if (ih < 0 || ih >= s.h) continue;
          const T* xrow = xc + ih * s.w;
          T* orow = out + oh * s.wo;
          for (int64_t ow = 0; ow < s.wo; ++ow) {
            const int64_t iw = ow * s.stride + kw - s.pad;
            if (iw < 0 || iw >= s.w) continue;
            orow[ow] += wv * xrow[iw];
          }
        }
      }
    }
  }
}

template <typename T>
inline void conv_bwd_input_slice(const T* dy, const T* w, T* dx, const ConvShape& s,
                                 int64_t in, int64_t ci) {
  T* dxc = dx + ((in * s.ci + ci) * s.h) * s.w;
  std::fill(dxc, dxc + s.h * s.w, T(0));
  for (int64_t co = 0; co < s.co; ++co) {
    const T* dyc = dy + ((in * s.co + co) * s.ho) * s.wo;
    const T* wc = w + (co * s.ci + ci) * s.k * s.k;
    for (int64_t kh = 0; kh < s.k; ++kh) {
      for (int64_t kw = 0; kw < s.k; ++kw) {
        const T wv = wc[kh * s.k + kw];
        if (wv == T(0)) continue;
        for (int64_t oh = 0; oh < s.ho; ++oh) {
          const int64_t ih = oh * s.stride + kh - s.pad;
          if (ih < 0 || ih >= s.h) continue;
          const T* dyrow = dyc + oh * s.wo;
          T* dxrow = dxc + ih * s.w;
          for (int64_t ow = 0; ow < s.wo; ++ow) {
            const int64_t iw = ow * s.stride + kw - s.pad;
            if (iw < 0 || iw >= s.w) continue;
            dxrow[iw] += wv * dyrow[ow];
          }
        }
      }
    }
  }
}

// Gradient of one filter plane w[co,ci,:,:]; accumulates over the whole batch.
template <typename T>
inline void conv_bwd_weight_plane(const T* x, const T* dy, T* dw, const ConvShape& s,
                                  int64_t co, int64_t ci) {
  T* dwc = dw + (co * s.ci + ci) * s.k * s.k;
  for (int64_t kh = 0; kh < s.k; ++kh) {
    for (int64_t kw = 0; kw < s.k; ++kw) {
      double acc = 0.0;
      for (int64_t in = 0; in < s.n; ++in) {
        const T* xc = x + ((in * s.ci + ci) * s.h) * s.w;
        const T* dyc = dy + ((in * s.co + co) * s.ho) * s.wo;
        for (int64_t oh = 0; oh < s.ho; ++oh) {
          const int64_t ih = oh * s.stride + kh - s.pad;
          if (ih < 0 || ih >= s.h) continue;
          const T* xrow = xc + ih * s.w;
          const T* dyrow = dyc + oh * s.wo;
          double row_acc = 0.0;
          for (int64_t ow = 0; ow < s.wo; ++ow) {
            const int64_t iw = ow * s.stride + kw - s.pad;
            if (iw < 0 || iw >= s.w) continue;
            row_acc += static_cast<double>(xrow[iw]) * static_cast<double>(dyrow[ow]);
          }
          acc += row_acc;
        }
      }
      dwc[kh * s.k + kw] += static_cast<T>(acc);
    }
  }
}

template <typename T>
inline void bn_fwd_train_channel(const T* x, const T* gamma, const T* beta, T* y,
                                 T* save_mean, T* save_invstd, T* running_mean,
                                 T* running_var, bool update_running, T momentum,
                                 T eps, int64_t n, int64_t c, int64_t hw, int64_t ch) {
  const int64_t count = n * hw;
  double sum = 0.0;
  for (int64_t in = 0; in < n; ++in) {
    const T* xc = x + (in * c + ch) * hw;
    for (int64_t i = 0; i < hw; ++i) sum += xc[i];
  }
  const double mean = sum / static_cast<double>(count);
  double var_sum = 0.0;
  for (int64_t in = 0; in < n; ++in) {
    const T* xc = x + (in * c + ch) * hw;
    for (int64_t i = 0; i < hw; ++i) {
      const double d = xc[i] - mean;
      var_sum += d * d;
    }
  }
  const double var = var_sum / static_cast<double>(count);  // biased, as normalization uses it
  const double invstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
  save_mean[ch] = static_cast<T>(mean);
  save_invstd[ch] = static_cast<T>(invstd);
  const double g = gamma[ch], b = beta[ch];
  for (int64_t in = 0; in < n; ++in) {
    const T* xc = x + (in * c + ch) * hw;
    T* yc = y + (in * c + ch) * hw;
    for (int64_t i = 0; i < hw; ++i)
      yc[i] = static_cast<T>((xc[i] - mean) * invstd * g + b);
  }
  if (update_running) {
    // Running variance keeps the unbiased estimate, matching common practice.
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    running_mean[ch] = static_cast<T>((1.0 - momentum) * running_mean[ch] + momentum * mean);
    running_var[ch] = static_cast<T>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
  }
}

template <typename T>
inline void bn_bwd_channel(const T* x, const T* dy, const T* gamma, const T* save_mean,
                           const T* save_invstd, T* dx, T* dgamma, T* dbeta,
                           int64_t n, int64_t c, int64_t hw, int64_t ch) {
  const int64_t count = n * hw;
  const double mean = save_mean[ch], invstd = save_invstd[ch], g = gamma[ch];
  double sum_dy = 0.0, sum_dy_xhat = 0.0;
  for (int64_t in = 0; in < n; ++in) {
    const T* xc = x + (in * c + ch) * hw;
    const T* dyc = dy + (in * c + ch) * hw;
    for (int64_t i = 0; i < hw; ++i) {
      const double xhat = (xc[i] - mean) * invstd;
      sum_dy += dyc[i];
      sum_dy_xhat += dyc[i] * xhat;
    }
  }
  dbeta[ch] += static_cast<T>(sum_dy);
  dgamma[ch] += static_cast<T>(sum_dy_xhat);
  const double scale = g * invstd / static_cast<double>(count);
  for (int64_t in = 0; in < n; ++in) {
    const T* xc = x + (in * c + ch) * hw;
    const T* dyc = dy + (in * c + ch) * hw;
    T* dxc = dx + (in * c + ch) * hw;
    for (int64_t i = 0; i < hw; ++i) {
      const double xhat = (xc[i] - mean) * invstd;
      dxc[i] = static_cast<T>(scale * (count * dyc[i] - sum_dy - xhat * sum_dy_xhat));
    }
  }
}

template <typename T>
inline void linear_fwd_row(const T* x, const T* w, const T* b, T* y,
                           int64_t in, int64_t out, int64_t row) {
  const T* xr = x + row * in;
  T* yr = y + row * out;
  for (int64_t o = 0; o < out; ++o) {
    const T* wr = w + o * in;
    double acc = b ? static_cast<double>(b[o]) : 0.0;
    for (int64_t i = 0; i < in; ++i) acc += static_cast<double>(xr[i]) * static_cast<double>(wr[i]);
    yr[o] = static_cast<T>(acc);
  }
}

template <typename T>
inline void adaptive_pool_slice(const T* x, T* y, int64_t h, int64_t w,
                                int64_t oh, int64_t ow, int64_t plane) {
  const T* xp = x + plane * h * w;
  T* yp = y + plane * oh * ow;
  for (int64_t i = 0; i < oh; ++i) {
    const int64_t hs = (i * h) / oh;
    const int64_t he = ((i + 1) * h + oh - 1) / oh;
    for (int64_t j = 0; j < ow; ++j) {
      const int64_t ws = (j * w) / ow;
      const int64_t we = ((j + 1) * w + ow - 1) / ow;
      double acc = 0.0;
      for (int64_t ih = hs; ih < he; ++ih)
        for (int64_t iw = ws; iw < we; ++iw) acc += xp[ih * w + iw];
      yp[i * ow + j] = static_cast<T>(acc / static_cast<double>((he - hs) * (we - ws)));
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- conv

template <typename T>
void conv2d_forward(const T* x, const T* w, T* y, const ConvShape& s) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < s.n; ++in)
    for (int64_t co = 0; co < s.co; ++co) detail::conv_fwd_slice(x, w, y, s, in, co);
}

template <typename T>
void conv2d_forward_serial(const T* x, const T* w, T* y, const ConvShape& s) {
  for (int64_t in = 0; in < s.n; ++in)
    for (int64_t co = 0; co < s.co; ++co) detail::conv_fwd_slice(x, w, y, s, in, co);
}

template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, const ConvShape& s) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < s.n; ++in)
    for (int64_t ci = 0; ci < s.ci; ++ci) detail::conv_bwd_input_slice(dy, w, dx, s, in, ci);
}

template <typename T>
void conv2d_backward_input_serial(const T* dy, const T* w, T* dx, const ConvShape& s) {
  for (int64_t in = 0; in < s.n; ++in)
    for (int64_t ci = 0; ci < s.ci; ++ci) detail::conv_bwd_input_slice(dy, w, dx, s, in, ci);
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, const ConvShape& s) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < s.co; ++co)
    for (int64_t ci = 0; ci < s.ci; ++ci) detail::conv_bwd_weight_plane(x, dy, dw, s, co, ci);
}

template <typename T>
void conv2d_backward_weight_serial(const T* x, const T* dy, T* dw, const ConvShape& s) {
  for (int64_t co = 0; co < s.co; ++co)
    for (int64_t ci = 0; ci < s.ci; ++ci) detail::conv_bwd_weight_plane(x, dy, dw, s, co, ci);
}

// ---------------------------------------------------------------- batch norm

template <typename T>
void bn_forward_train(const T* x, const T* gamma, const T* beta, T* y, T* save_mean,
                      T* save_invstd, T* running_mean, T* running_var,
                      bool update_running, T momentum, T eps,
                      int64_t n, int64_t c, int64_t hw) {
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch)
    detail::bn_fwd_train_channel(x, gamma, beta, y, save_mean, save_invstd, running_mean,
                                 running_var, update_running, momentum, eps, n, c, hw, ch);
}

template <typename T>
void bn_forward_train_serial(const T* x, const T* gamma, const T* beta, T* y, T* save_mean,
                             T* save_invstd, T* running_mean, T* running_var,
                             bool update_running, T momentum, T eps,
                             int64_t n, int64_t c, int64_t hw) {
  for (int64_t ch = 0; ch < c; ++ch)
    detail::bn_fwd_train_channel(x, gamma, beta, y, save_mean, save_invstd, running_mean,
                                 running_var, update_running, momentum, eps, n, c, hw, ch);
}

template <typename T>
void bn_forward_eval(const T* x, const T* gamma, const T* beta, const T* running_mean,
                     const T* running_var, T eps, T* y, int64_t n, int64_t c, int64_t hw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) +
                                            static_cast<double>(eps));
      const double g = gamma[ch], b = beta[ch], m = running_mean[ch];
      const T* xc = x + (in * c + ch) * hw;
      T* yc = y + (in * c + ch) * hw;
      for (int64_t i = 0; i < hw; ++i)
        yc[i] = static_cast<T>((xc[i] - m) * invstd * g + b);
    }
  }
}

template <typename T>
void bn_backward(const T* x, const T* dy, const T* gamma, const T* save_mean,
                 const T* save_invstd, T* dx, T* dgamma, T* dbeta,
                 int64_t n, int64_t c, int64_t hw) {
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch)
    detail::bn_bwd_channel(x, dy, gamma, save_mean, save_invstd, dx, dgamma, dbeta, n, c, hw, ch);
}

template <typename T>
void bn_backward_serial(const T* x, const T* dy, const T* gamma, const T* save_mean,
                        const T* save_invstd, T* dx, T* dgamma, T* dbeta,
                        int64_t n, int64_t c, int64_t hw) {
  for (int64_t ch = 0; ch < c; ++ch)
    detail::bn_bwd_channel(x, dy, gamma, save_mean, save_invstd, dx, dgamma, dbeta, n, c, hw, ch);
}

// ---------------------------------------------------------------- elementwise

template <typename T>
void relu_forward(const T* x, T* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void add_inplace(T* a, const T* b, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) a[i] += b[i];
}

template <typename T>
void sgd_momentum(T* p, const T* g, T* v, int64_t n, T lr, T momentum, T weight_decay) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i] + weight_decay * p[i];
    p[i] -= lr * v[i];
  }
}

template <typename T>
void ema_update(T* target, const T* source, T m, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) target[i] = m * target[i] + (T(1) - m) * source[i];
}

// ---------------------------------------------------------------- linear

template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y,
                    int64_t n, int64_t in, int64_t out) {
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < n; ++row) detail::linear_fwd_row(x, w, b, y, in, out, row);
}

template <typename T>
void linear_forward_serial(const T* x, const T* w, const T* b, T* y,
                           int64_t n, int64_t in, int64_t out) {
  for (int64_t row = 0; row < n; ++row) detail::linear_fwd_row(x, w, b, y, in, out, row);
}

template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx,
                           int64_t n, int64_t in, int64_t out) {
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < n; ++row) {
    T* dxr = dx + row * in;
    std::fill(dxr, dxr + in, T(0));
    const T* dyr = dy + row * out;
    for (int64_t o = 0; o < out; ++o) {
      const T dv = dyr[o];
      if (dv == T(0)) continue;
      const T* wr = w + o * in;
      for (int64_t i = 0; i < in; ++i) dxr[i] += dv * wr[i];
    }
  }
}

template <typename T>
void linear_backward_weight(const T* x, const T* dy, T* dw, T* db,
                            int64_t n, int64_t in, int64_t out) {
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < out; ++o) {
    T* dwr = dw + o * in;
    double db_acc = 0.0;
    for (int64_t row = 0; row < n; ++row) {
      const T dv = dy[row * out + o];
      db_acc += dv;
      if (dv == T(0)) continue;
      const T* xr = x + row * in;
      for (int64_t i = 0; i < in; ++i) dwr[i] += dv * xr[i];
    }
    if (db) db[o] += static_cast<T>(db_acc);
  }
}

// ---------------------------------------------------------------- pooling

template <typename T>
void maxpool_forward(const T* x, T* y, int64_t* argmax, int64_t n, int64_t c,
                     int64_t h, int64_t w, int64_t k, int64_t stride, int64_t pad) {
  const int64_t oh = conv_out_dim(h, k, stride, pad);
  const int64_t ow = conv_out_dim(w, k, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = x + (in * c + ch) * h * w;
      T* yp = y + (in * c + ch) * oh * ow;
      int64_t* ap = argmax + (in * c + ch) * oh * ow;
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int64_t kh = 0; kh < k; ++kh) {
            const int64_t ih = i * stride + kh - pad;
            if (ih < 0 || ih >= h) continue;
            for (int64_t kw = 0; kw < k; ++kw) {
              const int64_t iw = j * stride + kw - pad;
              if (iw < 0 || iw >= w) continue;
              const T v = xp[ih * w + iw];
              if (v > best) {
                best = v;
                best_idx = ih * w + iw;
              }
            }
          }
          yp[i * ow + j] = best;
          ap[i * ow + j] = best_idx;
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const T* dy, const int64_t* argmax, T* dx, int64_t n, int64_t c,
                      int64_t h, int64_t w, int64_t k, int64_t stride, int64_t pad) {
  const int64_t oh = conv_out_dim(h, k, stride, pad);
  const int64_t ow = conv_out_dim(w, k, stride, pad);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T* dxp = dx + (in * c + ch) * h * w;
      std::fill(dxp, dxp + h * w, T(0));
      const T* dyp = dy + (in * c + ch) * oh * ow;
      const int64_t* ap = argmax + (in * c + ch) * oh * ow;
      for (int64_t i = 0; i < oh * ow; ++i)
        if (ap[i] >= 0) dxp[ap[i]] += dyp[i];
    }
  }
}

template <typename T>
void adaptive_avgpool_forward(const T* x, T* y, int64_t n, int64_t c, int64_t h,
                              int64_t w, int64_t oh, int64_t ow) {
#pragma omp parallel for schedule(static)
  for (int64_t plane = 0; plane < n * c; ++plane)
    detail::adaptive_pool_slice(x, y, h, w, oh, ow, plane);
}

template <typename T>
void adaptive_avgpool_forward_serial(const T* x, T* y, int64_t n, int64_t c, int64_t h,
                                     int64_t w, int64_t oh, int64_t ow) {
  for (int64_t plane = 0; plane < n * c; ++plane)
    detail::adaptive_pool_slice(x, y, h, w, oh, ow, plane);
}

template <typename T>
void adaptive_avgpool_backward(const T* dy, T* dx, int64_t n, int64_t c, int64_t h,
                               int64_t w, int64_t oh, int64_t ow) {
#pragma omp parallel for schedule(static)
  for (int64_t plane = 0; plane < n * c; ++plane) {
    T* dxp = dx + plane * h * w;
    std::fill(dxp, dxp + h * w, T(0));
    const T* dyp = dy + plane * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      const int64_t hs = (i * h) / oh;
      const int64_t he = ((i + 1) * h + oh - 1) / oh;
      for (int64_t j = 0; j < ow; ++j) {
        const int64_t ws = (j * w) / ow;
        const int64_t we = ((j + 1) * w + ow - 1) / ow;
        const T g = dyp[i * ow + j] / static_cast<T>((he - hs) * (we - ws));
        for (int64_t ih = hs; ih < he; ++ih)
          for (int64_t iw = ws; iw < we; ++iw) dxp[ih * w + iw] += g;
      }
    }
  }
}

template <typename T>
void global_avgpool_forward(const T* x, T* y, int64_t n, int64_t c, int64_t hw) {
#pragma omp parallel for schedule(static)
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const T* xp = x + plane * hw;
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += xp[i];
    y[plane] = static_cast<T>(acc / static_cast<double>(hw));
  }
}

template <typename T>
void global_avgpool_backward(const T* dy, T* dx, int64_t n, int64_t c, int64_t hw) {
#pragma omp parallel for schedule(static)
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const T g = dy[plane] / static_cast<T>(hw);
    T* dxp = dx + plane * hw;
    for (int64_t i = 0; i < hw; ++i) dxp[i] = g;
  }
}

// ---------------------------------------------------------------- l2 norm

template <typename T>
void l2normalize_rows(const T* x, T* y, T* norms, int64_t n, int64_t d) {
  // Serial loop: rows may throw and the call sites are never hot.
  for (int64_t row = 0; row < n; ++row) {
    const T* xr = x + row * d;
    double acc = 0.0;
    for (int64_t i = 0; i < d; ++i) acc += static_cast<double>(xr[i]) * static_cast<double>(xr[i]);
    const double norm = std::sqrt(acc);
    if (!(norm > 1e-20)) throw std::domain_error("zero vector cannot be normalized");
    norms[row] = static_cast<T>(norm);
    T* yr = y + row * d;
    for (int64_t i = 0; i < d; ++i) yr[i] = static_cast<T>(xr[i] / norm);
  }
}

template <typename T>
void l2normalize_rows_backward(const T* y, const T* norms, const T* dy, T* dx,
                               int64_t n, int64_t d) {
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < n; ++row) {
    const T* yr = y + row * d;
    const T* dyr = dy + row * d;
    T* dxr = dx + row * d;
    double dot = 0.0;
    for (int64_t i = 0; i < d; ++i) dot += static_cast<double>(yr[i]) * static_cast<double>(dyr[i]);
    const double inv = 1.0 / static_cast<double>(norms[row]);
    for (int64_t i = 0; i < d; ++i)
      dxr[i] = static_cast<T>((dyr[i] - dot * yr[i]) * inv);
  }
}

// ---------------------------------------------------------------- softmax xent

template <typename T>
double softmax_xent_forward(const T* logits, const int64_t* labels, T* probs,
                            int64_t n, int64_t c) {
  std::vector<double> losses(static_cast<size_t>(n));
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < n; ++row) {
    const T* lr = logits + row * c;
    T* pr = probs + row * c;
    double mx = lr[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, static_cast<double>(lr[i]));
    double z = 0.0;
    for (int64_t i = 0; i < c; ++i) z += std::exp(static_cast<double>(lr[i]) - mx);
    const double logz = std::log(z) + mx;
    for (int64_t i = 0; i < c; ++i) pr[i] = static_cast<T>(std::exp(static_cast<double>(lr[i]) - logz));
    losses[static_cast<size_t>(row)] = logz - static_cast<double>(lr[labels[row]]);
  }
  double total = 0.0;
  for (double l : losses) total += l;  // fixed order, deterministic
  return total / static_cast<double>(n);
}

template <typename T>
void softmax_xent_backward(const T* probs, const int64_t* labels, T* dlogits,
                           int64_t n, int64_t c) {
  const T scale = T(1) / static_cast<T>(n);
#pragma omp parallel for schedule(static)
  for (int64_t row = 0; row < n; ++row) {
    const T* pr = probs + row * c;
    T* dr = dlogits + row * c;
    for (int64_t i = 0; i < c; ++i) dr[i] = pr[i] * scale;
    dr[labels[row]] -= scale;
  }
}

// ---------------------------------------------------------------- instantiation

#define CGH_INSTANTIATE(T)                                                                   \
  template void conv2d_forward<T>(const T*, const T*, T*, const ConvShape&);                 \
  template void conv2d_forward_serial<T>(const T*, const T*, T*, const ConvShape&);          \
  template void conv2d_backward_input<T>(const T*, const T*, T*, const ConvShape&);          \
  template void conv2d_backward_input_serial<T>(const T*, const T*, T*, const ConvShape&);   \
  template void conv2d_backward_weight<T>(const T*, const T*, T*, const ConvShape&);         \
  template void conv2d_backward_weight_serial<T>(const T*, const T*, T*, const ConvShape&);  \
  template void bn_forward_train<T>(const T*, const T*, const T*, T*, T*, T*, T*, T*, bool,  \
                                    T, T, int64_t, int64_t, int64_t);                        \
  template void bn_forward_train_serial<T>(const T*, const T*, const T*, T*, T*, T*, T*, T*, \
                                           bool, T, T, int64_t, int64_t, int64_t);           \
  template void bn_forward_eval<T>(const T*, const T*, const T*, const T*, const T*, T, T*,  \
                                   int64_t, int64_t, int64_t);                               \
  template void bn_backward<T>(const T*, const T*, const T*, const T*, const T*, T*, T*, T*, \
                               int64_t, int64_t, int64_t);                                   \
  template void bn_backward_serial<T>(const T*, const T*, const T*, const T*, const T*, T*,  \
                                      T*, T*, int64_t, int64_t, int64_t);                    \
  template void relu_forward<T>(const T*, T*, int64_t);                                      \
  template void relu_backward<T>(const T*, const T*, T*, int64_t);                           \
  template void add_inplace<T>(T*, const T*, int64_t);                                       \
  template void sgd_momentum<T>(T*, const T*, T*, int64_t, T, T, T);                         \
  template void ema_update<T>(T*, const T*, T, int64_t);                                     \
  template void linear_forward<T>(const T*, const T*, const T*, T*, int64_t, int64_t,        \
                                  int64_t);                                                  \
  template void linear_forward_serial<T>(const T*, const T*, const T*, T*, int64_t, int64_t, \
                                         int64_t);                                           \
  template void linear_backward_input<T>(const T*, const T*, T*, int64_t, int64_t, int64_t); \
  template void linear_backward_weight<T>(const T*, const T*, T*, T*, int64_t, int64_t,      \
                                          int64_t);                                          \
  template void maxpool_forward<T>(const T*, T*, int64_t*, int64_t, int64_t, int64_t,        \
                                   int64_t, int64_t, int64_t, int64_t);                      \
  template void maxpool_backward<T>(const T*, const int64_t*, T*, int64_t, int64_t, int64_t, \
                                    int64_t, int64_t, int64_t, int64_t);                     \
  template void adaptive_avgpool_forward<T>(const T*, T*, int64_t, int64_t, int64_t,         \
                                            int64_t, int64_t, int64_t);                      \
  template void adaptive_avgpool_forward_serial<T>(const T*, T*, int64_t, int64_t, int64_t,  \
                                                   int64_t, int64_t, int64_t);               \
  template void adaptive_avgpool_backward<T>(const T*, T*, int64_t, int64_t, int64_t,        \
                                             int64_t, int64_t, int64_t);                     \
  template void global_avgpool_forward<T>(const T*, T*, int64_t, int64_t, int64_t);          \
  template void global_avgpool_backward<T>(const T*, T*, int64_t, int64_t, int64_t);         \
  template void l2normalize_rows<T>(const T*, T*, T*, int64_t, int64_t);                     \
  template void l2normalize_rows_backward<T>(const T*, const T*, const T*, T*, int64_t,      \
                                             int64_t);                                       \
  template double softmax_xent_forward<T>(const T*, const int64_t*, T*, int64_t, int64_t);   \
  template void softmax_xent_backward<T>(const T*, const int64_t*, T*, int64_t, int64_t);

CGH_INSTANTIATE(float)
CGH_INSTANTIATE(double)

#undef CGH_INSTANTIATE

}  // namespace cgh::kernels
