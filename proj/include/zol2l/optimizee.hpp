#ifndef ZOL2L_OPTIMIZEE_HPP
#define ZOL2L_OPTIMIZEE_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>

#include "zol2l/common.hpp"

namespace zol2l {

/// Minibatch seed meaning "use every sample".
inline constexpr std::uint64_t kFullBatch = ~std::uint64_t{0};

/// A query-only objective. `value` is pure given (theta, batch_seed) and
/// uncounted; `query` is the metered zeroth-order oracle that optimizers use.
class Optimizee {
 public:
  Optimizee() = default;
  Optimizee(const Optimizee&) = delete;
  Optimizee& operator=(const Optimizee&) = delete;
  virtual ~Optimizee() = default;

  virtual Index dimension() const = 0;
  virtual double value(const Vector& theta, std::uint64_t batch_seed) const = 0;
  double full_value(const Vector& theta) const { return value(theta, kFullBatch); }

  virtual bool has_gradient() const { return false; }
  /// Analytic gradient of the same minibatch expression as `value`.
  virtual Vector gradient(const Vector& theta, std::uint64_t batch_seed) const;

  /// Deterministic starting point for a trial; shared by every optimizer.
  virtual Vector initial_point(std::uint64_t trial_seed) const;

  /// True when `value` depends on the batch seed.
  virtual bool stochastic() const { return false; }

  /// Metered evaluation: increments the ledger by one, then evaluates.
  double query(const Vector& theta, std::uint64_t batch_seed);

  std::uint64_t ledger() const { return ledger_.load(std::memory_order_relaxed); }
  void reset_ledger() { ledger_.store(0, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> ledger_{0};
};

/// Adapts plain callables; handy for sanity objectives.
class FunctionOptimizee final : public Optimizee {
 public:
  using Fn = std::function<double(const Vector&)>;
  using GradFn = std::function<Vector(const Vector&)>;

  FunctionOptimizee(Index dim, Fn f, GradFn grad = {}, Vector start = Vector())
      : dim_(dim), f_(std::move(f)), grad_(std::move(grad)), start_(std::move(start)) {}

  Index dimension() const override { return dim_; }
  double value(const Vector& theta, std::uint64_t) const override { return f_(theta); }
  bool has_gradient() const override { return static_cast<bool>(grad_); }
  Vector gradient(const Vector& theta, std::uint64_t batch_seed) const override;
  Vector initial_point(std::uint64_t trial_seed) const override;

 private:
  Index dim_;
  Fn f_;
  GradFn grad_;
  Vector start_;
};

}  // namespace zol2l

#endif  // ZOL2L_OPTIMIZEE_HPP
