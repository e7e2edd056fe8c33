#pragma once

#include <stdexcept>
#include <string>

namespace lora2 {

// Shape/dimension violations; message names both offending shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Parameter outside its mathematical domain (nu <= 0, q outside (0,1), ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API contract (non-scalar loss, empty attention set, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Function evaluation produced a non-finite value where one was required.
struct EvalError : std::runtime_error {
    explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training loop hit a non-finite loss; carries the diagnostic dump.
struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint loading failures, one type per distinct condition.
struct MagicMismatchError : std::runtime_error {
    explicit MagicMismatchError(const std::string& msg) : std::runtime_error(msg) {}
};
struct TruncatedFileError : std::runtime_error {
    explicit TruncatedFileError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CheckpointShapeError : std::runtime_error {
    explicit CheckpointShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Config file problems (unknown key, missing key, unparsable value).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace lora2
