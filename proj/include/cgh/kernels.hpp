#pragma once

#include <cstdint>

namespace cgh::kernels {

// Low-level compute kernels, templated on the scalar type (float for the
// training path, double for high-precision tests). Each heavy kernel exists
// twice: the OpenMP-parallel default and a `_serial` reference with the exact
// same per-output arithmetic, so the two are bit-identical and the tests can
// compare them exactly. Parallel loops are owner-computes: every output
// element is written by exactly one thread, which keeps results independent
// of the thread count.
//
// Conventions:
//  - backward-input kernels overwrite their dx argument;
//  - backward-weight kernels accumulate (+=) into dw/db, callers zero grads
//    at the start of each optimizer step;
//  - reductions accumulate in double regardless of T.

struct ConvShape {
  int64_t n, ci, h, w;   // input
  int64_t co, k;         // square kernel
  int64_t stride, pad;
  int64_t ho, wo;        // output, derived via make_conv_shape
};

int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad);
ConvShape make_conv_shape(int64_t n, int64_t ci, int64_t h, int64_t w, int64_t co,
                          int64_t k, int64_t stride, int64_t pad);

// ---- convolution (no bias; every conv in this codebase feeds a BN) ----
template <typename T>
void conv2d_forward(const T* x, const T* w, T* y, const ConvShape& s);
template <typename T>
void conv2d_forward_serial(const T* x, const T* w, T* y, const ConvShape& s);

template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, const ConvShape& s);
template <typename T>
void conv2d_backward_input_serial(const T* dy, const T* w, T* dx, const ConvShape& s);

template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, const ConvShape& s);
template <typename T>
void conv2d_backward_weight_serial(const T* x, const T* dy, T* dw, const ConvShape& s);

// ---- batch norm over NCHW, statistics per channel ----
// Train mode normalizes with batch statistics; update_running controls
// whether running_{mean,var} absorb them (teacher forwards pass false).
template <typename T>
void bn_forward_train(const T* x, const T* gamma, const T* beta, T* y,
                      T* save_mean, T* save_invstd, T* running_mean, T* running_var,
                      bool update_running, T momentum, T eps,
                      int64_t n, int64_t c, int64_t hw);
template <typename T>
void bn_forward_train_serial(const T* x, const T* gamma, const T* beta, T* y,
                             T* save_mean, T* save_invstd, T* running_mean,
                             T* running_var, bool update_running, T momentum, T eps,
                             int64_t n, int64_t c, int64_t hw);

template <typename T>
void bn_forward_eval(const T* x, const T* gamma, const T* beta,
                     const T* running_mean, const T* running_var, T eps, T* y,
                     int64_t n, int64_t c, int64_t hw);

template <typename T>
void bn_backward(const T* x, const T* dy, const T* gamma, const T* save_mean,
                 const T* save_invstd, T* dx, T* dgamma, T* dbeta,
                 int64_t n, int64_t c, int64_t hw);
template <typename T>
void bn_backward_serial(const T* x, const T* dy, const T* gamma, const T* save_mean,
                        const T* save_invstd, T* dx, T* dgamma, T* dbeta,
                        int64_t n, int64_t c, int64_t hw);

// ---- elementwise ----
template <typename T> void relu_forward(const T* x, T* y, int64_t n);
template <typename T> void relu_backward(const T* x, const T* dy, T* dx, int64_t n);
template <typename T> void add_inplace(T* a, const T* b, int64_t n);
template <typename T> void sgd_momentum(T* p, const T* g, T* v, int64_t n,
                                        T lr, T momentum, T weight_decay);
template <typename T> void ema_update(T* target, const T* source, T m, int64_t n);

// ---- fully connected: x[n,in] * w[out,in]^T + b -> y[n,out] ----
template <typename T>
void linear_forward(const T* x, const T* w, const T* b, T* y,
                    int64_t n, int64_t in, int64_t out);
template <typename T>
void linear_forward_serial(const T* x, const T* w, const T* b, T* y,
                           int64_t n, int64_t in, int64_t out);
template <typename T>
void linear_backward_input(const T* dy, const T* w, T* dx,
                           int64_t n, int64_t in, int64_t out);
template <typename T>
void linear_backward_weight(const T* x, const T* dy, T* dw, T* db,
                            int64_t n, int64_t in, int64_t out);

// ---- pooling ----
template <typename T>
void maxpool_forward(const T* x, T* y, int64_t* argmax,
                     int64_t n, int64_t c, int64_t h, int64_t w,
                     int64_t k, int64_t stride, int64_t pad);
template <typename T>
void maxpool_backward(const T* dy, const int64_t* argmax, T* dx,
                      int64_t n, int64_t c, int64_t h, int64_t w,
                      int64_t k, int64_t stride, int64_t pad);

// PyTorch-style adaptive average pooling: cell (i,j) averages the input
// region [floor(i*H/OH), ceil((i+1)*H/OH)) x [floor(j*W/OW), ceil((j+1)*W/OW)).
template <typename T>
void adaptive_avgpool_forward(const T* x, T* y, int64_t n, int64_t c,
                              int64_t h, int64_t w, int64_t oh, int64_t ow);
template <typename T>
void adaptive_avgpool_forward_serial(const T* x, T* y, int64_t n, int64_t c,
                                     int64_t h, int64_t w, int64_t oh, int64_t ow);
template <typename T>
void adaptive_avgpool_backward(const T* dy, T* dx, int64_t n, int64_t c,
                               int64_t h, int64_t w, int64_t oh, int64_t ow);

template <typename T>
void global_avgpool_forward(const T* x, T* y, int64_t n, int64_t c, int64_t hw);
template <typename T>
void global_avgpool_backward(const T* dy, T* dx, int64_t n, int64_t c, int64_t hw);

// ---- row-wise L2 normalization ----
// Throws std::domain_error if a row has (near-)zero norm.
template <typename T>
void l2normalize_rows(const T* x, T* y, T* norms, int64_t n, int64_t d);
template <typename T>
void l2normalize_rows_backward(const T* y, const T* norms, const T* dy, T* dx,
                               int64_t n, int64_t d);

// ---- softmax cross entropy against integer labels (probe / fine-tune heads) ----
template <typename T>
double softmax_xent_forward(const T* logits, const int64_t* labels, T* probs,
                            int64_t n, int64_t c);
template <typename T>
void softmax_xent_backward(const T* probs, const int64_t* labels, T* dlogits,
                           int64_t n, int64_t c);

}  // namespace cgh::kernels
