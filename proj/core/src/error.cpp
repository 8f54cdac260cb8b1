#include "lidarsim/error.hpp"

namespace lidarsim {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::Io: return "io error";
        case ErrorCode::MalformedFile: return "malformed file";
        case ErrorCode::LabelMismatch: return "label mismatch";
        case ErrorCode::EmptyInput: return "empty input";
        case ErrorCode::ModalityUnavailable: return "modality unavailable";
        case ErrorCode::Shape: return "shape error";
        case ErrorCode::InsufficientPoints: return "insufficient points";
        case ErrorCode::InvalidPoint: return "invalid point";
        case ErrorCode::Config: return "config error";
        case ErrorCode::TrainingFault: return "training fault";
        case ErrorCode::Detached: return "detached graph";
    }
    return "error";
}

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Config:
        case ErrorCode::ModalityUnavailable:
            return 2;
        case ErrorCode::TrainingFault:
            return 4;
        default:
            return 3;
    }
}

}  // namespace lidarsim
