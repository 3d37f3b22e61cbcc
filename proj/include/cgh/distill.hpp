#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cgh/rng.hpp"

namespace cgh {

enum class ContextVariant { cross, same, global };

ContextVariant context_variant_from_string(const std::string& s);
std::string to_string(ContextVariant v);

// FIFO queue of past teacher embeddings, stored row-major and unit-norm.
// The bank is pre-filled with random unit vectors at init, so it always holds
// exactly `capacity` entries; enqueue overwrites the oldest rows in ring order.
// In analysis mode each entry also carries its class label.
struct MemoryBank {
  int64_t capacity = 0;
  int64_t dim = 0;
  std::vector<double> entries;   // capacity x dim
  std::vector<int64_t> labels;   // capacity, only if tracks_labels
  int64_t cursor = 0;
  bool tracks_labels = false;

  static MemoryBank random_init(int64_t capacity, int64_t dim, Rng& rng,
                                bool with_labels = false);

  // batch is count x dim; rows are re-normalized on insertion.
  void enqueue(const double* batch, int64_t count, const int64_t* batch_labels = nullptr);
  void enqueue(std::span<const double> flat_batch, std::span<const int64_t> batch_labels = {});

  const double* entry(int64_t i) const { return entries.data() + i * dim; }
};

// u.v / (|u||v|); throws std::domain_error on a zero vector.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// softmax_i(sim(z, bank_i) / tau), computed with max subtraction.
// tau must be > 0.
std::vector<double> similarity_distribution(std::span<const double> z,
                                            const MemoryBank& bank, double tau);

// -sum_k target[k] * log(pred[k]); target is treated as a constant.
double cross_entropy(std::span<const double> pred, std::span<const double> target);

struct LossBundle {
  double gh = 0.0;     // global-from-hypercolumn alignment (first term)
  double hg = 0.0;     // hypercolumn-from-global alignment (second term)
  double total = 0.0;  // gh + hg
};

// Gradients w.r.t. the raw student vectors (cosine normalization applied
// inside the loss, so callers may pass unnormalized vectors). Teacher inputs
// are pure targets: no gradient flows to them by construction.
struct CghLossGrads {
  std::vector<double> wrt_student_global;
  std::vector<double> wrt_student_hyper;
};

// Cross-context relational loss for one sample.
//   cross : CE(student-global vs Q @ tau_s, teacher-hyper vs Qh @ tau_h)
//         + CE(student-hyper vs Qh @ tau_h, teacher-global vs Q @ tau_t)
//   same  : CE(student-global, teacher-global) + CE(student-hyper, teacher-hyper)
//   global: CE(student-global, teacher-global) only (hg term = 0)
LossBundle cgh_loss(std::span<const double> student_global,
                    std::span<const double> student_hyper,
                    std::span<const double> teacher_global,
                    std::span<const double> teacher_hyper,
                    const MemoryBank& global_bank, const MemoryBank& hyper_bank,
                    double tau_student, double tau_teacher, double tau_hyper,
                    ContextVariant variant, CghLossGrads* grads = nullptr);

// Batch variant: inputs are batch x dim, loss is averaged, gradients are
// scaled by 1/batch. Parallel over samples; each sample is computed by a
// single owner, so results do not depend on the thread count.
struct CghBatchLoss {
  LossBundle mean;
  std::vector<double> grad_student_global;  // batch x dim
  std::vector<double> grad_student_hyper;   // batch x dim (empty for global variant)
};

CghBatchLoss cgh_loss_batch(const double* student_global, const double* student_hyper,
                            const double* teacher_global, const double* teacher_hyper,
                            int64_t batch, int64_t dim,
                            const MemoryBank& global_bank, const MemoryBank& hyper_bank,
                            double tau_student, double tau_teacher, double tau_hyper,
                            ContextVariant variant, bool want_grads);

}  // namespace cgh
