#pragma once

#include <stdexcept>
#include <string>

namespace misdetect {

/// Base for every failure caused by inputs or configuration. The CLI maps
/// these to exit code 1; anything else escaping is treated as internal.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, std::string field = {})
      : std::runtime_error(what), field_(std::move(field)) {}

  /// Name of the offending input field or file, empty when not applicable.
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Training produced a non-finite loss or update.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace misdetect
