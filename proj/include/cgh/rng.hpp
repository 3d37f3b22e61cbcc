#pragma once

#include <cstdint>
#include <string_view>

namespace cgh {

// Deterministic xoshiro256** generator with stateless stream derivation.
// Every consumer (data worker, bank init, parameter init, ...) owns a private
// stream keyed by (seed, tag, a, b), so a resumed run rebuilds identical
// streams without ever serializing engine state. All distributions are
// hand-rolled on top of next_u64() to stay bit-reproducible across standard
// libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Derives an independent stream, e.g. derive(seed, "aug/student", epoch, i).
  static Rng derive(uint64_t seed, std::string_view tag, uint64_t a = 0,
                    uint64_t b = 0);

  uint64_t next_u64();

  double uniform();                         // [0, 1)
  double uniform(double lo, double hi);     // [lo, hi)
  double normal();                          // standard normal (Box-Muller)
  double normal(double mean, double stddev);
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds
  bool bernoulli(double p);

 private:
  uint64_t state_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// FNV-1a, used for stream tags and content hashes.
uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull);
uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull);

}  // namespace cgh
