#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stressor {

enum class ErrorKind {
  kInvalidSpec,
  kSignalTooShort,
  kUnsupportedRatio,
  kInsufficientData,
  kShape,
  kNoSignal,
  kInvalidInterval,
  kConvergence,
  kMissingChannel,
  kInvalidBaseline,
  kUnimputableColumn,
  kDegenerateLabels,
  kUndefinedMetric,
  kUndefinedTest,
  kRankDeficiency,
  kInsufficientRecovery,
  kParse,
  kValidation,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// All library failures surface as this exception; `kind()` is what the CLI
// reports in its machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Solver failure with the diagnostics needed to judge how close it got.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, int iterations, double duality_gap)
      : Error(ErrorKind::kConvergence, message),
        iterations_(iterations),
        duality_gap_(duality_gap) {}

  int iterations() const noexcept { return iterations_; }
  double duality_gap() const noexcept { return duality_gap_; }

 private:
  int iterations_;
  double duality_gap_;
};

}  // namespace stressor
