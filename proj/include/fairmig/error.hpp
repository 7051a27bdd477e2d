#pragma once

#include <stdexcept>
#include <string>

namespace fairmig {

// Error taxonomy. Every throwing path in the library uses one of these so
// callers (and the experiment runner) can distinguish bad input from bad
// state from bad math.

// Malformed external files: missing columns, unparseable rows.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& msg) : std::runtime_error("schema error: " + msg) {}
};

// Well-formed input that violates a data invariant (dangling edge, non-binary
// sensitive value, ...).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error("validation error: " + msg) {}
};

// Bad configuration values (fractions not summing to 1, alpha out of range...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// API misuse: shape mismatches, mutating frozen state, empty masks.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error("contract error: " + msg) {}
};

// Non-finite values encountered during numeric work.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

// A metric that is undefined for the given inputs (single-class AUC, empty group).
struct MetricUndefinedError : std::runtime_error {
    explicit MetricUndefinedError(const std::string& msg)
        : std::runtime_error("metric undefined: " + msg) {}
};

// A migration round that would require an empty or undersized group.
struct MigrationDegeneracyError : std::runtime_error {
    explicit MigrationDegeneracyError(const std::string& msg)
        : std::runtime_error("migration degeneracy: " + msg) {}
};

}  // namespace fairmig
