// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace editflow {

// Bad caller-supplied data (shape mismatch, invalid scene, missing slot).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad configuration (unknown key, unknown edit type, out-of-range knob).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse that violates a documented precondition (e.g. t=1 passed to the
// two-step refinement path).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Non-finite values surfaced from numerics, with context about where.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Checkpoint/config version mismatch.
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Retriable transport failure from an external judge endpoint.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Backend lacks a required capability (e.g. image gradients).
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace editflow
