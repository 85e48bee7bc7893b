#include "edm2d/rng.hpp"

#include <cmath>
#include <numbers>

namespace edm2d {

namespace {

// SplitMix64 finalizer (Steele, Lea & Flood 2014).
std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) { return mix(mix(seed) ^ mix(~purpose)); }

std::uint64_t CounterRng::key(std::uint64_t stream, std::uint64_t step) const {
  std::uint64_t k = mix(seed_);
  k = mix(k ^ static_cast<std::uint64_t>(purpose_));
  k = mix(k ^ stream);
  return mix(k ^ step);
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t step, std::uint64_t index) const {
  return to_unit(mix(key(stream, step) ^ mix(index)));
}

double CounterRng::normal(std::uint64_t stream, std::uint64_t step, std::uint64_t index) const {
  const std::uint64_t k = key(stream, step);
  // Box-Muller on two uniforms; u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - to_unit(mix(k ^ mix(2 * index)));
  const double u2 = to_unit(mix(k ^ mix(2 * index + 1)));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor CounterRng::normals(Eigen::Index rows, Eigen::Index cols, std::uint64_t step) const {
  Tensor out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = normal(static_cast<std::uint64_t>(r), step, static_cast<std::uint64_t>(c));
    }
  }
  return out;
}

}  // namespace edm2d
