#pragma once

#include <stdexcept>
#include <string>

namespace crossmodal {

// Error taxonomy mirrored by the CLI exit codes: ConfigError maps to exit 1,
// everything else to exit 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape / dimension contract violations in the tensor engine.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed external data (scene files, label grids, checkpoints).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training-time failures: divergence, non-finite loss components.
struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem and serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scene generation failures (object placement retries exhausted).
struct GenError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace crossmodal
