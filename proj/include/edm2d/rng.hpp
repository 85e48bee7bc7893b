#pragma once

#include "edm2d/tensor.hpp"

#include <cstdint>
#include <random>

namespace edm2d {

/// Sequential generator for training batches, dataset draws and initialization.
using Rng = std::mt19937_64;

/// Seed for an independent sequential stream derived from a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose);

/// Independent sub-streams drawn from one seed are separated by purpose.
enum class StreamPurpose : std::uint64_t {
  Prior = 1,
  Proposal = 2,
  Resample = 3,
  Potential = 4,
  Probe = 5,
};

/// Stateless counter-based normal/uniform source. A draw is a pure function of
/// (seed, purpose, stream, step, index), so results do not depend on the order
/// or thread in which particles are visited.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, StreamPurpose purpose) : seed_(seed), purpose_(purpose) {}

  /// Uniform in [0, 1).
  double uniform(std::uint64_t stream, std::uint64_t step, std::uint64_t index) const;
  double normal(std::uint64_t stream, std::uint64_t step, std::uint64_t index) const;

  /// rows x cols standard normals; row r uses stream r.
  Tensor normals(Eigen::Index rows, Eigen::Index cols, std::uint64_t step) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t key(std::uint64_t stream, std::uint64_t step) const;

  std::uint64_t seed_;
  StreamPurpose purpose_;
};

}  // namespace edm2d
