#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgh/rng.hpp"

namespace cgh {

// Dense row-major float32 tensor. All model math runs on these; the
// relational-distillation path works in double on plain vectors instead
// (see distill.hpp).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s);

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, float v);
  static Tensor randn(std::vector<int64_t> s, Rng& rng, float stddev = 1.0f);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }
  bool defined() const { return !shape.empty(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  void zero_();
  std::string shape_str() const;
};

int64_t numel_of(const std::vector<int64_t>& shape);

}  // namespace cgh
