#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pbm {

enum class ErrorCode {
  InvalidArgument,
  DegenerateDomain,
  QuasiUniformityViolated,
  OutOfDomain,
  InvalidIndex,
  UnsupportedOrder,
  DerivativeOrderTooHigh,
  LinkRangeInvalid,
  InvalidP,
  ResponseOutOfRange,
  NonPositiveTuning,
  CellTooSparse,
  BoxRequired,
  NotConverged,
  SingularQ,
  CovarianceNotPSD,
  WrongModel,
  BasisMismatch,
  DataError,
};

std::string_view to_string(ErrorCode code);

// Exit-code class used by the CLI: 2 for bad input data, 3 for numerical failures.
enum class ErrorClass { Usage, Data, Numerical };
ErrorClass classify(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace pbm
