#ifndef ZOL2L_RNG_HPP
#define ZOL2L_RNG_HPP

#include <cstdint>
#include <random>

#include "zol2l/common.hpp"

namespace zol2l {

/// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);

/// Seed of the `index`-th child stream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Reproducible random stream.
///
/// Engine: std::mt19937_64 (bit-exact across standard libraries).
/// Uniform: top 53 bits of one engine output, scaled to [0, 1).
/// Normal: Box-Muller on two uniforms; both variates are used, the second
/// one cached for the next call.
/// Bernoulli(p): one uniform u, returns u < p.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Vector normal_vector(Index n);
  Matrix normal_matrix(Index rows, Index cols);

  /// Child stream; advances this stream by one draw.
  Rng split() { return Rng(mix64(next_u64())); }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

/// The two streams a single optimization trajectory consumes. Baselines only
/// draw from `sampling` (minibatch seeds, query directions); Bernoulli
/// covariance mixing draws from `mixing`, so variants that differ only in
/// mixing see identical sampling streams.
struct TrajectoryRng {
  explicit TrajectoryRng(std::uint64_t seed)
      : sampling(derive_seed(seed, 0)), mixing(derive_seed(seed, 1)) {}
  Rng sampling;
  Rng mixing;
};

}  // namespace zol2l

#endif  // ZOL2L_RNG_HPP
