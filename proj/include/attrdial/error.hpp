// Error taxonomy shared across the library. Each failure mode gets its own
// type so callers and tests can discriminate without string matching.
#pragma once

#include <stdexcept>
#include <string>

namespace attrdial {

// Shape mismatch in tensor/layer math. Message names both shapes.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller passed a value outside an operation's documented domain.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Attribute schema / lexicon problems (duplicate names, marker collisions...).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed serialized data; message carries the offending line when known.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Requested corpus size exceeds what the template space can produce.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stratified batch construction impossible (e.g. attribute sub-batch empty).
struct BatchingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite loss/gradient during optimization; message says where.
struct TrainingDivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ODE state became non-finite during integration; message names the step.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Artifact written by an incompatible format or different schema/vocab.
struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Artifact bytes fail their checksum or are structurally truncated.
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Run configuration rejected before any stage executed.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Evaluation protocol violated (e.g. classifier train splits overlap).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Importance-sampling oracle refused to report (effective sample size too low).
struct OracleDegenerateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace attrdial
