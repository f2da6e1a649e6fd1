#pragma once

#include <stdexcept>
#include <string>

namespace bnrl {

/// Dimension or size mismatch between tensors.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Invalid scalar argument (negative std, bad epsilon, ...).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Bad input data: label out of range, non-probability row, degenerate dataset.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation called in the wrong layer/model state (no cached forward, ...).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operation requires a different train/eval mode.
struct ModeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed file (IDX magic, truncation, checkpoint corruption).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration (unknown key, type mismatch, missing field).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Checksum mismatch or otherwise untrusted file content.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dataset fetch failed (offline and no cache).
struct FetchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace bnrl
