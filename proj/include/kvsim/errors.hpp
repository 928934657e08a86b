#pragma once

#include <stdexcept>
#include <string>

namespace kvsim {

enum class ErrorCode {
    // graph construction / step computation
    UnknownAgent,
    SelfLoop,
    DuplicateAgent,
    EmptyActiveSet,
    // radix cache
    UnderflowUnlock,
    UnknownBoundaryNode,
    BoundaryBeyondCache,
    InsufficientHistory,
    // tier manager
    IllegalState,
    OutOfGpuMemory,
    // config / cli
    ConfigError,
    UnknownAxis,
    IoError,
    // internal consistency (audits, deadlocks)
    InternalError,
};

// Single exception type carrying a machine-checkable code; tests assert on
// the code, messages are for humans.
class SimError : public std::runtime_error {
public:
    SimError(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void throw_error(ErrorCode code, const std::string& msg) {
    throw SimError(code, msg);
}

}  // namespace kvsim
