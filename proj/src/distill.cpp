#include "cgh/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgh {

ContextVariant context_variant_from_string(const std::string& s) {
  if (s == "cross") return ContextVariant::cross;
  if (s == "same") return ContextVariant::same;
  if (s == "global") return ContextVariant::global;
  throw std::invalid_argument("unknown context-variant '" + s +
                              "' (expected cross, same or global)");
}

std::string to_string(ContextVariant v) {
  switch (v) {
    case ContextVariant::cross: return "cross";
    case ContextVariant::same: return "same";
    case ContextVariant::global: return "global";
  }
  return "?";
}

namespace {

void normalize_into(const double* v, int64_t dim, double* out) {
  double acc = 0.0;
  for (int64_t i = 0; i < dim; ++i) acc += v[i] * v[i];
  const double norm = std::sqrt(acc);
  if (!(norm > 1e-200)) throw std::domain_error("zero vector cannot be normalized");
  for (int64_t i = 0; i < dim; ++i) out[i] = v[i] / norm;
}

double norm_of(const double* v, int64_t dim) {
  double acc = 0.0;
  for (int64_t i = 0; i < dim; ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

// softmax(sim(unit_z, bank rows)/tau) into `dist` (size capacity).
void distribution_from_unit(const double* unit_z, const MemoryBank& bank, double tau,
                            double* dist) {
  const int64_t m = bank.capacity, d = bank.dim;
  double mx = -1e300;
  for (int64_t i = 0; i < m; ++i) {
    const double* q = bank.entry(i);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += unit_z[j] * q[j];
    dist[i] = s / tau;
    mx = std::max(mx, dist[i]);
  }
  double z = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    dist[i] = std::exp(dist[i] - mx);
    z += dist[i];
  }
  for (int64_t i = 0; i < m; ++i) dist[i] /= z;
}

// One CE alignment term. pred_v / tgt_v are raw (not necessarily unit)
// vectors; grad, if requested, is w.r.t. the raw pred_v.
double ce_alignment(const double* pred_v, const MemoryBank& pred_bank, double pred_tau,
                    const double* tgt_v, const MemoryBank& tgt_bank, double tgt_tau,
                    int64_t dim, double* grad) {
  std::vector<double> pred_hat(dim), tgt_hat(dim);
  normalize_into(pred_v, dim, pred_hat.data());
  normalize_into(tgt_v, dim, tgt_hat.data());

  std::vector<double> p(pred_bank.capacity), t(tgt_bank.capacity);
  distribution_from_unit(pred_hat.data(), pred_bank, pred_tau, p.data());
  distribution_from_unit(tgt_hat.data(), tgt_bank, tgt_tau, t.data());

  double loss = 0.0;
  for (int64_t i = 0; i < pred_bank.capacity; ++i) loss -= t[i] * std::log(p[i]);

  if (grad) {
    // dL/d(sim_i) = (p_i - t_i)/tau; pull back through the bank rows and the
    // normalization Jacobian (I - zz^T)/|v|.
    std::vector<double> g_hat(dim, 0.0);
    for (int64_t i = 0; i < pred_bank.capacity; ++i) {
      const double coef = (p[i] - t[i]) / pred_tau;
      const double* q = pred_bank.entry(i);
      for (int64_t j = 0; j < dim; ++j) g_hat[j] += coef * q[j];
    }
    double dot = 0.0;
    for (int64_t j = 0; j < dim; ++j) dot += g_hat[j] * pred_hat[j];
    const double inv_norm = 1.0 / norm_of(pred_v, dim);
    for (int64_t j = 0; j < dim; ++j)
      grad[j] = (g_hat[j] - dot * pred_hat[j]) * inv_norm;
  }
  return loss;
}

void check_taus(double tau_student, double tau_teacher, double tau_hyper) {
  if (!(tau_student > 0.0)) throw std::invalid_argument("tau_s must be > 0");
  if (!(tau_teacher > 0.0)) throw std::invalid_argument("tau_t must be > 0");
  if (!(tau_hyper > 0.0)) throw std::invalid_argument("tau_h must be > 0");
}

}  // namespace

MemoryBank MemoryBank::random_init(int64_t capacity, int64_t dim, Rng& rng,
                                   bool with_labels) {
  if (capacity <= 0 || dim <= 0)
    throw std::invalid_argument("memory bank capacity and dim must be positive");
  MemoryBank bank;
  bank.capacity = capacity;
  bank.dim = dim;
  bank.entries.resize(static_cast<size_t>(capacity * dim));
  for (auto& x : bank.entries) x = rng.normal();
  for (int64_t i = 0; i < capacity; ++i) {
    double* row = bank.entries.data() + i * dim;
    normalize_into(row, dim, row);
  }
  bank.tracks_labels = with_labels;
  if (with_labels) bank.labels.assign(static_cast<size_t>(capacity), -1);
  return bank;
}

void MemoryBank::enqueue(const double* batch, int64_t count, const int64_t* batch_labels) {
  if (count > capacity)
    throw std::invalid_argument("enqueue batch larger than bank capacity");
  if (tracks_labels && count > 0 && batch_labels == nullptr)
    throw std::invalid_argument("bank tracks labels but none were provided");
  for (int64_t b = 0; b < count; ++b) {
    double* row = entries.data() + cursor * dim;
    normalize_into(batch + b * dim, dim, row);
    if (tracks_labels) labels[static_cast<size_t>(cursor)] = batch_labels[b];
    cursor = (cursor + 1) % capacity;
  }
}

void MemoryBank::enqueue(std::span<const double> flat_batch,
                         std::span<const int64_t> batch_labels) {
  if (flat_batch.size() % static_cast<size_t>(dim) != 0)
    throw std::invalid_argument("enqueue batch size not divisible by bank dim");
  const int64_t count = static_cast<int64_t>(flat_batch.size()) / dim;
  enqueue(flat_batch.data(), count, batch_labels.empty() ? nullptr : batch_labels.data());
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (!(uu > 0.0) || !(vv > 0.0))
    throw std::domain_error("cosine similarity of a zero vector is undefined");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

std::vector<double> similarity_distribution(std::span<const double> z,
                                            const MemoryBank& bank, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (static_cast<int64_t>(z.size()) != bank.dim)
    throw std::invalid_argument("embedding dim does not match bank dim");
  std::vector<double> unit(bank.dim);
  normalize_into(z.data(), bank.dim, unit.data());
  std::vector<double> dist(static_cast<size_t>(bank.capacity));
  distribution_from_unit(unit.data(), bank, tau, dist.data());
  return dist;
}

double cross_entropy(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("cross_entropy: size mismatch");
  double loss = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (target[i] == 0.0) continue;
    if (!(pred[i] > 0.0))
      throw std::domain_error("cross_entropy: zero prediction with nonzero target mass");
    loss -= target[i] * std::log(pred[i]);
  }
  return loss;
}

LossBundle cgh_loss(std::span<const double> student_global,
                    std::span<const double> student_hyper,
                    std::span<const double> teacher_global,
                    std::span<const double> teacher_hyper,
                    const MemoryBank& global_bank, const MemoryBank& hyper_bank,
                    double tau_student, double tau_teacher, double tau_hyper,
                    ContextVariant variant, CghLossGrads* grads) {
  check_taus(tau_student, tau_teacher, tau_hyper);
  const int64_t dim = global_bank.dim;

  double* grad_g = nullptr;
  double* grad_h = nullptr;
  if (grads) {
    grads->wrt_student_global.assign(static_cast<size_t>(dim), 0.0);
    grad_g = grads->wrt_student_global.data();
    if (variant != ContextVariant::global) {
      grads->wrt_student_hyper.assign(static_cast<size_t>(dim), 0.0);
      grad_h = grads->wrt_student_hyper.data();
    } else {
      grads->wrt_student_hyper.clear();
    }
  }

  LossBundle out;
  switch (variant) {
    case ContextVariant::cross:
      out.gh = ce_alignment(student_global.data(), global_bank, tau_student,
                            teacher_hyper.data(), hyper_bank, tau_hyper, dim, grad_g);
      out.hg = ce_alignment(student_hyper.data(), hyper_bank, tau_hyper,
                            teacher_global.data(), global_bank, tau_teacher, dim, grad_h);
      break;
    case ContextVariant::same:
      out.gh = ce_alignment(student_global.data(), global_bank, tau_student,
                            teacher_global.data(), global_bank, tau_teacher, dim, grad_g);
      out.hg = ce_alignment(student_hyper.data(), hyper_bank, tau_hyper,
                            teacher_hyper.data(), hyper_bank, tau_hyper, dim, grad_h);
      break;
    case ContextVariant::global:
      out.gh = ce_alignment(student_global.data(), global_bank, tau_student,
                            teacher_global.data(), global_bank, tau_teacher, dim, grad_g);
      out.hg = 0.0;
      break;
  }
  out.total = out.gh + out.hg;
  return out;
}

CghBatchLoss cgh_loss_batch(const double* student_global, const double* student_hyper,
                            const double* teacher_global, const double* teacher_hyper,
                            int64_t batch, int64_t dim,
                            const MemoryBank& global_bank, const MemoryBank& hyper_bank,
                            double tau_student, double tau_teacher, double tau_hyper,
                            ContextVariant variant, bool want_grads) {
  check_taus(tau_student, tau_teacher, tau_hyper);
  const bool has_hyper = variant != ContextVariant::global;

  CghBatchLoss out;
  if (want_grads) {
    out.grad_student_global.assign(static_cast<size_t>(batch * dim), 0.0);
    if (has_hyper) out.grad_student_hyper.assign(static_cast<size_t>(batch * dim), 0.0);
  }
  std::vector<LossBundle> per_sample(static_cast<size_t>(batch));

#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < batch; ++b) {
    CghLossGrads g;
    const auto row = [&](const double* base) {
      return std::span<const double>(base + b * dim, static_cast<size_t>(dim));
    };
    per_sample[static_cast<size_t>(b)] =
        cgh_loss(row(student_global), has_hyper ? row(student_hyper) : row(student_global),
                 row(teacher_global), has_hyper ? row(teacher_hyper) : row(teacher_global),
                 global_bank, hyper_bank, tau_student, tau_teacher, tau_hyper, variant,
                 want_grads ? &g : nullptr);
    if (want_grads) {
      const double scale = 1.0 / static_cast<double>(batch);
      for (int64_t j = 0; j < dim; ++j)
        out.grad_student_global[static_cast<size_t>(b * dim + j)] =
            g.wrt_student_global[static_cast<size_t>(j)] * scale;
      if (has_hyper)
        for (int64_t j = 0; j < dim; ++j)
          out.grad_student_hyper[static_cast<size_t>(b * dim + j)] =
              g.wrt_student_hyper[static_cast<size_t>(j)] * scale;
    }
  }

  for (const auto& s : per_sample) {
    out.mean.gh += s.gh;
    out.mean.hg += s.hg;
  }
  out.mean.gh /= static_cast<double>(batch);
  out.mean.hg /= static_cast<double>(batch);
  out.mean.total = out.mean.gh + out.mean.hg;
  return out;
}

}  // namespace cgh
