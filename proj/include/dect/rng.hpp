#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dect {

std::uint64_t splitmix64(std::uint64_t& state);

// Decorrelated child seed for an independent stream (per material, per
// iteration, per epoch, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic sampling helpers on top of std::mt19937_64. The engine is
// fully specified by the standard; the distributions are hand-rolled because
// std::normal_distribution and std::shuffle are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  // (0, 1]
  double uniform_open() { return static_cast<double>((gen_() >> 11) + 1) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double gaussian();
  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Counter-based standard normal: a pure function of (seed, index), so noise
// fields can be generated in parallel and stay bit-identical.
double counter_gaussian(std::uint64_t seed, std::uint64_t index);

// FNV-1a over bytes; used for config digests and output hashing.
std::uint64_t fnv1a64(const void* bytes, size_t len);

}  // namespace dect
