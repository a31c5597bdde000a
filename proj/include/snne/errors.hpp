#pragma once

#include <stdexcept>
#include <string>

namespace snne {

// Shape contract violations between tensors/parameters. Messages always name
// both shapes involved.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operation preconditions (odd pooling dims, out-of-range pixel values, ...).
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid user-facing configuration (network config, schedules, CLI input).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable/corrupt/mismatched checkpoint streams.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset ingestion failures; message carries the offending path.
struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Broken internal invariant (misused tape, trace/graph mismatch).
struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace snne
