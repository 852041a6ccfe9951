#include "thinkact/error.hpp"

namespace thinkact {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::placement_infeasible: return "placement-infeasible";
    case ErrorKind::no_referent: return "no-referent";
    case ErrorKind::ambiguous_referent: return "ambiguous-referent";
    case ErrorKind::unsatisfiable_constraints: return "unsatisfiable-constraints";
    case ErrorKind::generation_stalled: return "generation-stalled";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::io_error: return "io-error";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::unknown_token: return "unknown-token";
    case ErrorKind::length_mismatch: return "length-mismatch";
    case ErrorKind::called_before_decode: return "called-before-decode";
    case ErrorKind::nan_loss: return "nan-loss";
    case ErrorKind::empty_cell: return "empty-cell";
  }
  return "unknown";
}

}  // namespace thinkact
