#include "dect/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace dect {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s ^= stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL;
  std::uint64_t b = splitmix64(s);
  return a ^ (b + 0x165667B19E3779F9ULL + (a << 6) + (a >> 2));
}

double Rng::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0,1] uniforms; u1 > 0 keeps the log finite.
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 6.283185307179586476925286766559 * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double counter_gaussian(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ 0x5851F42D4C957F2DULL;
  (void)splitmix64(s);
  s ^= index * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL;
  const std::uint64_t r1 = splitmix64(s);
  const std::uint64_t r2 = splitmix64(s);
  const double u1 = static_cast<double>((r1 >> 11) + 1) * 0x1.0p-53;  // (0,1]
  const double u2 = static_cast<double>(r2 >> 11) * 0x1.0p-53;       // [0,1)
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476925286766559 * u2);
}

std::uint64_t fnv1a64(const void* bytes, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace dect
