#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dswinir {

/// Base class for every error the library raises. `kind()` names the
/// category used by the CLI to pick an exit code.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error("shape-error", w) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error("numeric-error", w) {}
};
struct ParameterError : Error {
    explicit ParameterError(const std::string& w) : Error("parameter-error", w) {}
};
struct TapeError : Error {
    explicit TapeError(const std::string& w) : Error("tape-error", w) {}
};
struct CheckError : Error {
    explicit CheckError(const std::string& w) : Error("check-error", w) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error("config-error", w) {}
};
struct OptimizerError : Error {
    explicit OptimizerError(const std::string& w) : Error("optimizer-error", w) {}
};
struct DataError : Error {
    explicit DataError(const std::string& w) : Error("data-error", w) {}
};

// Errors tied to a position inside a byte stream.
class OffsetError : public Error {
public:
    OffsetError(std::string kind, const std::string& w, std::uint64_t offset)
        : Error(std::move(kind), w + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

struct IoError : OffsetError {
    IoError(const std::string& w, std::uint64_t offset) : OffsetError("io-error", w, offset) {}
};
struct CheckpointError : OffsetError {
    CheckpointError(const std::string& w, std::uint64_t offset)
        : OffsetError("checkpoint-error", w, offset) {}
};

}  // namespace dswinir
