#pragma once

#include <stdexcept>
#include <string>

namespace veil {

/// Base class for all toolkit errors. `error_class()` is the stable,
/// machine-parsable identifier the CLI prints on failure.
class Error : public std::runtime_error {
public:
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(msg), class_(std::move(cls)) {}
    const std::string& error_class() const noexcept { return class_; }

private:
    std::string class_;
};

/// Config file parse/schema failures and invariant violations.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

/// Missing/corrupt dataset files, bad records.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data", msg) {}
};

/// Checkpoint/architecture mismatches, unknown model ids.
struct ModelError : Error {
    explicit ModelError(const std::string& msg) : Error("model", msg) {}
};

/// Non-finite activations or losses.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

/// API misuse: shape mismatches, bad labels, empty datasets.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

/// Trainer-internal scheduling bugs (mask recomputation outside its window).
struct ScheduleError : Error {
    explicit ScheduleError(const std::string& msg) : Error("schedule", msg) {}
};

/// Filesystem and serialization failures.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

}  // namespace veil
