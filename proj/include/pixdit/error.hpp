// Copyright (c) 2026 pixdit authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pixdit {

// Base for everything thrown by the library. The CLI maps subclasses to
// exit codes: config/usage -> 1, runtime -> 2, verification -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad tensor shapes, missing ids, mismatched sizes.
struct InvalidInputError : Error {
    using Error::Error;
};

// Argument outside its mathematical domain (t outside [0,1], r >= 1, ...).
struct DomainError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Division by (1 - t) at or beyond the guard.
struct SingularityError : Error {
    using Error::Error;
};

// API misuse (wrong head variant, double concat, ...).
struct UsageError : Error {
    using Error::Error;
};

// Inconsistent training state (name mismatch between maps, bad checkpoint).
struct StateError : Error {
    using Error::Error;
};

// Non-finite values, non-PSD matrices after regularization.
struct NumericalError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace pixdit
