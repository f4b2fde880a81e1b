#pragma once

#include <stdexcept>
#include <string>

namespace subqm {

// Exit-code buckets used by the command line tool: config errors map to 2,
// numeric failures to 3, I/O to 4.
enum class ErrorKind {
  config,
  numeric,
  io,
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what), kind_(kind), name_(std::move(name)) {}
  ErrorKind kind() const { return kind_; }
  const std::string& name() const { return name_; }

private:
  ErrorKind kind_;
  std::string name_;
};

#define SUBQM_DEFINE_ERROR(NAME, KIND)                          \
  class NAME : public Error {                                   \
  public:                                                       \
    explicit NAME(const std::string& what)                      \
        : Error(ErrorKind::KIND, #NAME, what) {}                \
  }

SUBQM_DEFINE_ERROR(SingularMatrix, numeric);
SUBQM_DEFINE_ERROR(SingularForm, numeric);
SUBQM_DEFINE_ERROR(NonIntegrable, numeric);
SUBQM_DEFINE_ERROR(NonNormalizable, numeric);
SUBQM_DEFINE_ERROR(NonpositiveDuration, numeric);
SUBQM_DEFINE_ERROR(RegimeViolation, numeric);
SUBQM_DEFINE_ERROR(StepDiverged, numeric);
SUBQM_DEFINE_ERROR(SupportEscapedGrid, numeric);
SUBQM_DEFINE_ERROR(InvalidCount, config);
SUBQM_DEFINE_ERROR(ConfigInvalid, config);
SUBQM_DEFINE_ERROR(SamplingDegenerate, numeric);
SUBQM_DEFINE_ERROR(FitFailed, numeric);
SUBQM_DEFINE_ERROR(ZeroCounts, numeric);
SUBQM_DEFINE_ERROR(TooFewPulses, config);
SUBQM_DEFINE_ERROR(IoFailure, io);

#undef SUBQM_DEFINE_ERROR

}  // namespace subqm
