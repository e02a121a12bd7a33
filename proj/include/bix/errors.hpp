#pragma once

#include <stdexcept>
#include <string>

namespace bix {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes.
struct EngineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : EngineError {
    using EngineError::EngineError;
};

struct DomainError : EngineError {
    using EngineError::EngineError;
};

// Violated call contract (wrong arity, non-scalar loss, ...).
struct ContractError : EngineError {
    using EngineError::EngineError;
};

struct NumericError : EngineError {
    using EngineError::EngineError;
};

struct ConfigError : EngineError {
    using EngineError::EngineError;
};

struct TopologyError : EngineError {
    using EngineError::EngineError;
};

struct ParseError : EngineError {
    using EngineError::EngineError;
};

struct SearchError : EngineError {
    using EngineError::EngineError;
};

struct CheckpointError : EngineError {
    using EngineError::EngineError;
};

}  // namespace bix
