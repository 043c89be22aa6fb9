#include "twsim/error.hpp"

namespace twsim {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::DegenerateSpeed: return "DegenerateSpeed";
        case ErrorKind::OutOfPath: return "OutOfPath";
        case ErrorKind::SingularProjection: return "SingularProjection";
        case ErrorKind::StalledOnPath: return "StalledOnPath";
        case ErrorKind::SingularSteering: return "SingularSteering";
        case ErrorKind::FitDiverged: return "FitDiverged";
        case ErrorKind::Infeasible: return "Infeasible";
        case ErrorKind::Diverged: return "Diverged";
        case ErrorKind::KeyMismatch: return "KeyMismatch";
        case ErrorKind::MissingRun: return "MissingRun";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::InvalidInput: return "InvalidInput";
    }
    return "Unknown";
}

}  // namespace twsim
