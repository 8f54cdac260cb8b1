#pragma once

#include <stdexcept>
#include <string>

namespace lidarsim {

enum class ErrorCode {
    Io,
    MalformedFile,
    LabelMismatch,
    EmptyInput,
    ModalityUnavailable,
    Shape,
    InsufficientPoints,
    InvalidPoint,
    Config,
    TrainingFault,
    Detached,
};

const char* to_string(ErrorCode code);

// Process exit code for the CLI: 2 config, 3 data, 4 training fault.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace lidarsim
