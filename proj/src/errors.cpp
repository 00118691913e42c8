#include "pdnrl/error.hpp"

namespace pdnrl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidRange: return "invalid-range";
    case ErrorKind::IncompatibleGrids: return "incompatible-grids";
    case ErrorKind::CascadeSingularity: return "cascade-singularity";
    case ErrorKind::NoSuchPort: return "no-such-port";
    case ErrorKind::InvalidSelection: return "invalid-selection";
    case ErrorKind::SingularSystem: return "singular-system";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Format: return "format";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::ExhaustedActions: return "exhausted-actions";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Config: return "config";
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace pdnrl
