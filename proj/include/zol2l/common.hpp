#ifndef ZOL2L_COMMON_HPP
#define ZOL2L_COMMON_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace zol2l {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorKind {
  kInvalidArgument,
  kShapeMismatch,
  kNonFinite,
  kMalformedDocument,
  kUnavailable,
  kConfig,
};

const char* to_string(ErrorKind kind);

/// Base exception for the library. `kind()` distinguishes failure classes
/// callers are expected to branch on (e.g. the CLI maps them to exit codes).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a function value, gradient or parameter turns non-finite.
/// Carries the query point when one is known.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, Vector point = Vector())
      : Error(ErrorKind::kNonFinite, what), point_(std::move(point)) {}
  const Vector& point() const noexcept { return point_; }

 private:
  Vector point_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const std::string& what) {
  if (!x.allFinite()) throw NumericError(what + ": non-finite entry");
}

}  // namespace zol2l

#endif  // ZOL2L_COMMON_HPP
