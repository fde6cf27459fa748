#pragma once

#include <stdexcept>
#include <string>

namespace csnerf {

// Base class for every error raised by the library. `kind()` is a stable
// machine-readable tag; what() carries the human-readable context.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CSNERF_DEFINE_ERROR(Name)                                       \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

CSNERF_DEFINE_ERROR(InvalidArgument)
CSNERF_DEFINE_ERROR(BehindCamera)
CSNERF_DEFINE_ERROR(EmptyDataset)
CSNERF_DEFINE_ERROR(UnknownLabel)
CSNERF_DEFINE_ERROR(UnknownSequence)
CSNERF_DEFINE_ERROR(DepthOutOfRange)
CSNERF_DEFINE_ERROR(DegenerateSegment)
CSNERF_DEFINE_ERROR(Diverged)
CSNERF_DEFINE_ERROR(NotFound)
CSNERF_DEFINE_ERROR(IngestionError)
CSNERF_DEFINE_ERROR(FormatError)

#undef CSNERF_DEFINE_ERROR

// Wraps an error raised inside a pipeline stage with the stage name.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& message)
      : Error("StageError", "[" + stage + "] " + message), stage_(stage) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace csnerf
