#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ldcap {

enum class ErrorCode {
  InvalidInput,
  GraphError,
  RoleError,
  SchemaError,
  ParseError,
  SingularReducedLaplacian,
  RankDeficiency,
  InfeasibleStart,
  NonPositiveVolatility,
  NonPositiveTau,
  ZeroVarianceLine,
  NoStochasticLines,
  NonUniformGamma,
  NegativeRadicand,
  DegenerateF,
  BlowUp,
  NoBoundaryHit,
  BoundCollapse,
  EmptySlice,
  InsufficientHits,
  ZeroBaseFlow,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::GraphError: return "GraphError";
    case ErrorCode::RoleError: return "RoleError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SingularReducedLaplacian: return "SingularReducedLaplacian";
    case ErrorCode::RankDeficiency: return "RankDeficiency";
    case ErrorCode::InfeasibleStart: return "InfeasibleStart";
    case ErrorCode::NonPositiveVolatility: return "NonPositiveVolatility";
    case ErrorCode::NonPositiveTau: return "NonPositiveTau";
    case ErrorCode::ZeroVarianceLine: return "ZeroVarianceLine";
    case ErrorCode::NoStochasticLines: return "NoStochasticLines";
    case ErrorCode::NonUniformGamma: return "NonUniformGamma";
    case ErrorCode::NegativeRadicand: return "NegativeRadicand";
    case ErrorCode::DegenerateF: return "DegenerateF";
    case ErrorCode::BlowUp: return "BlowUp";
    case ErrorCode::NoBoundaryHit: return "NoBoundaryHit";
    case ErrorCode::BoundCollapse: return "BoundCollapse";
    case ErrorCode::EmptySlice: return "EmptySlice";
    case ErrorCode::InsufficientHits: return "InsufficientHits";
    case ErrorCode::ZeroBaseFlow: return "ZeroBaseFlow";
  }
  return "Unknown";
}

// Every failure in the library surfaces as an Error carrying a code, so
// callers (the CLI in particular) can map failure classes to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Error(ErrorCode code, std::size_t line, const std::string& what) : Error(code, what) { line_ = line; }

  ErrorCode code() const noexcept { return code_; }
  // internal index of the offending line, when there is one
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace ldcap
