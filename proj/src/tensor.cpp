#include "cgh/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace cgh {

int64_t numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("tensor dims must be non-negative");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
}

Tensor Tensor::full(std::vector<int64_t> s, float v) {
  Tensor t(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::randn(std::vector<int64_t> s, Rng& rng, float stddev) {
  Tensor t(std::move(s));
  for (auto& x : t.data) x = static_cast<float>(rng.normal() * stddev);
  return t;
}

void Tensor::zero_() { std::fill(data.begin(), data.end(), 0.0f); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace cgh
