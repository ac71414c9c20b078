#pragma once

#include <stdexcept>
#include <string>

namespace hsbi {

// Error taxonomy used across the library. CLI maps these to exit codes:
// ConfigError -> 2, NumericError/TrainingError/SimulationError -> 3,
// FormatError -> 4, everything else -> 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

class LayoutError : public Error {
public:
    explicit LayoutError(const std::string& msg) : Error("layout error: " + msg) {}
};

class SimulationError : public Error {
public:
    explicit SimulationError(const std::string& msg) : Error("simulation error: " + msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error("training error: " + msg) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class DiagnosticError : public Error {
public:
    explicit DiagnosticError(const std::string& msg) : Error("diagnostic error: " + msg) {}
};

}  // namespace hsbi
