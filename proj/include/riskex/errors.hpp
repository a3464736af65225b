#pragma once

#include <stdexcept>
#include <string>

namespace riskex {

/// Base class for all errors raised by the engine.
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input text (model file, plan file, expression source).
/// The message carries a location (line/column or JSON path).
class ParseError : public Error {
  public:
    using Error::Error;
};

/// Structurally parseable input that violates a model/plan invariant.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Expression evaluation failure: unbound name, type mismatch, division by zero.
class EvalError : public Error {
  public:
    using Error::Error;
};

/// Runtime failure inside the simulator (non-finite derivative, cascade
/// overflow, stale branch, stepping an ended state).
class SimulationError : public Error {
  public:
    using Error::Error;
};

/// Snapshot bytes that cannot be restored (corruption, version or model mismatch).
class SnapshotError : public Error {
  public:
    using Error::Error;
};

/// Filesystem-level failure.
class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace riskex
