#ifndef RBK_ERROR_HPP
#define RBK_ERROR_HPP

#include <stdexcept>
#include <string>

namespace rbk {

enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  degenerate_knots,
  not_positive_definite,
  rank_deficient_basis,
  no_solution,
  numerical_inconsistency,
  collinear_covariates,
  no_model,
  capability,
  format,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::dimension_mismatch: return "dimension-mismatch";
    case ErrorKind::degenerate_knots: return "degenerate-knots";
    case ErrorKind::not_positive_definite: return "not-positive-definite";
    case ErrorKind::rank_deficient_basis: return "rank-deficient-basis";
    case ErrorKind::no_solution: return "no-solution";
    case ErrorKind::numerical_inconsistency: return "numerical-inconsistency";
    case ErrorKind::collinear_covariates: return "collinear-covariates";
    case ErrorKind::no_model: return "no-model";
    case ErrorKind::capability: return "capability";
    case ErrorKind::format: return "format";
  }
  return "unknown";
}

/// Library-wide exception. `kind()` identifies the failure class so callers
/// (the CLI in particular) can map it to a stable exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace rbk

#endif  // RBK_ERROR_HPP
