#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avrm {

// Base for every error the library throws. `kind()` is a stable short tag
// used by the CLI to pick exit codes and by tests to match categories.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define AVRM_DEFINE_ERROR(Name, tag)                             \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what) : Error(tag, what) {} \
  };

AVRM_DEFINE_ERROR(DomainError, "domain")
AVRM_DEFINE_ERROR(ConfigError, "config")
AVRM_DEFINE_ERROR(ShapeError, "shape")
AVRM_DEFINE_ERROR(UsageError, "usage")
AVRM_DEFINE_ERROR(DataError, "data")
AVRM_DEFINE_ERROR(SchemaError, "schema")
AVRM_DEFINE_ERROR(DegenerateAnchorsError, "degenerate_anchors")
AVRM_DEFINE_ERROR(ThresholdError, "threshold")
AVRM_DEFINE_ERROR(DegenerateMetricError, "degenerate_metric")
AVRM_DEFINE_ERROR(IoError, "io")

#undef AVRM_DEFINE_ERROR

// A malformed JSONL line. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace avrm
