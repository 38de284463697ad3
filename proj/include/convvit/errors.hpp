#pragma once

#include <stdexcept>
#include <string>

namespace convvit {

// Shape/rank mismatches detected at op entry.
struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Structurally invalid configuration (bad group counts, non-square heads, ...).
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Operation invoked before its prerequisites (missing trace, missing cache).
struct state_error : std::logic_error {
    using std::logic_error::logic_error;
};

// A requested placement does not fit the optical device.
struct infeasible_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or unreadable external file (checkpoint, config, image).
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace convvit
