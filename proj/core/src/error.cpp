#include "pbm/error.hpp"

namespace pbm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DegenerateDomain: return "DegenerateDomain";
    case ErrorCode::QuasiUniformityViolated: return "QuasiUniformityViolated";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::InvalidIndex: return "InvalidIndex";
    case ErrorCode::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorCode::DerivativeOrderTooHigh: return "DerivativeOrderTooHigh";
    case ErrorCode::LinkRangeInvalid: return "LinkRangeInvalid";
    case ErrorCode::InvalidP: return "InvalidP";
    case ErrorCode::ResponseOutOfRange: return "ResponseOutOfRange";
    case ErrorCode::NonPositiveTuning: return "NonPositiveTuning";
    case ErrorCode::CellTooSparse: return "CellTooSparse";
    case ErrorCode::BoxRequired: return "BoxRequired";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::SingularQ: return "SingularQ";
    case ErrorCode::CovarianceNotPSD: return "CovarianceNotPSD";
    case ErrorCode::WrongModel: return "WrongModel";
    case ErrorCode::BasisMismatch: return "BasisMismatch";
    case ErrorCode::DataError: return "DataError";
  }
  return "Unknown";
}

ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnsupportedOrder:
    case ErrorCode::DerivativeOrderTooHigh:
    case ErrorCode::LinkRangeInvalid:
    case ErrorCode::InvalidP:
    case ErrorCode::NonPositiveTuning:
    case ErrorCode::BoxRequired:
    case ErrorCode::WrongModel:
    case ErrorCode::BasisMismatch:
      return ErrorClass::Usage;
    case ErrorCode::DegenerateDomain:
    case ErrorCode::QuasiUniformityViolated:
    case ErrorCode::OutOfDomain:
    case ErrorCode::InvalidIndex:
    case ErrorCode::ResponseOutOfRange:
    case ErrorCode::CellTooSparse:
    case ErrorCode::DataError:
      return ErrorClass::Data;
    case ErrorCode::NotConverged:
    case ErrorCode::SingularQ:
    case ErrorCode::CovarianceNotPSD:
      return ErrorClass::Numerical;
  }
  return ErrorClass::Numerical;
}

}  // namespace pbm
