#include "zol2l/optimizee.hpp"

namespace zol2l {

Vector Optimizee::gradient(const Vector&, std::uint64_t) const {
  throw Error(ErrorKind::kUnavailable, "optimizee exposes no analytic gradient");
}

Vector Optimizee::initial_point(std::uint64_t) const { return Vector::Zero(dimension()); }

double Optimizee::query(const Vector& theta, std::uint64_t batch_seed) {
  require(theta.size() == dimension(), ErrorKind::kShapeMismatch, "query: dimension mismatch");
  ledger_.fetch_add(1, std::memory_order_relaxed);
  return value(theta, batch_seed);
}

Vector FunctionOptimizee::gradient(const Vector& theta, std::uint64_t batch_seed) const {
  if (!grad_) return Optimizee::gradient(theta, batch_seed);
  return grad_(theta);
}

Vector FunctionOptimizee::initial_point(std::uint64_t) const {
  return start_.size() == dim_ ? start_ : Vector::Zero(dim_);
}

}  // namespace zol2l
