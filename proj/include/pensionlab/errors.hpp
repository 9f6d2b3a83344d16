#pragma once

#include <stdexcept>
#include <string>

namespace pensionlab {

/// Invalid run configuration. `pointer` is a JSON pointer to the offending
/// field, empty when the problem is not tied to one field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& pointer, const std::string& message)
      : std::invalid_argument(pointer.empty() ? message : pointer + ": " + message),
        pointer(pointer),
        message(message) {}
  std::string pointer;
  std::string message;
};

}  // namespace pensionlab
