#include "avrm/errors.hpp"

namespace avrm {

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("parse", "line " + std::to_string(line) + ": " + what),
      line_(line) {}

}  // namespace avrm
