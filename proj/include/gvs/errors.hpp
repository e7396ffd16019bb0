#pragma once

#include <stdexcept>
#include <string>

namespace gvs {

// Base class for all library errors. The CLI maps these to machine-readable
// error JSON; the `kind` string is stable across releases.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& message) : Error("invalid_input", message) {}
};

class InvalidConfigError : public Error {
public:
    explicit InvalidConfigError(const std::string& message) : Error("invalid_config", message) {}
};

// Raised by the phantom generator when the requested geometry is infeasible.
class GenerationError : public Error {
public:
    explicit GenerationError(const std::string& message) : Error("generation_error", message) {}
};

// Per-entry dataset load failure; carries the manifest entry id.
class LoadError : public Error {
public:
    LoadError(std::string id, const std::string& message)
        : Error("load_error", "entry '" + id + "': " + message), id_(std::move(id)) {}

    const std::string& id() const noexcept { return id_; }

private:
    std::string id_;
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& message) : Error("checkpoint_error", message) {}
};

class UndefinedMetricError : public Error {
public:
    explicit UndefinedMetricError(const std::string& message) : Error("undefined_metric", message) {}
};

// Training aborted on a non-finite loss; message names the diagnostic snapshot
// when one could be written.
class NonFiniteLossError : public Error {
public:
    explicit NonFiniteLossError(const std::string& message) : Error("non_finite_loss", message) {}
};

}  // namespace gvs
