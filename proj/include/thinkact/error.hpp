#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace thinkact {

enum class ErrorKind {
  invalid_argument,
  placement_infeasible,
  no_referent,
  ambiguous_referent,
  unsatisfiable_constraints,
  generation_stalled,
  parse_error,
  io_error,
  shape_mismatch,
  unknown_token,
  length_mismatch,
  called_before_decode,
  nan_loss,
  empty_cell,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every module reports failures through this type; `kind()` lets callers
// branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace thinkact
