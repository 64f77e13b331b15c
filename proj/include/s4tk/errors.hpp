#pragma once

#include <stdexcept>
#include <string>

namespace s4tk {

// Exit-code convention: 0 success, 2 config error, 3 IO error,
// 4 numeric/contract failure.
class Error : public std::runtime_error {
public:
    Error(std::string msg, int exit_code)
        : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg, 2) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg, 3) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg, 4) {}
};

class IndexError : public Error {
public:
    explicit IndexError(const std::string& msg) : Error("index error: " + msg, 4) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg, 4) {}
};

class GeometryError : public Error {
public:
    explicit GeometryError(const std::string& msg) : Error("geometry error: " + msg, 4) {}
};

class CurationError : public Error {
public:
    explicit CurationError(const std::string& msg) : Error("curation error: " + msg, 4) {}
};

class MetricError : public Error {
public:
    explicit MetricError(const std::string& msg) : Error("metric error: " + msg, 4) {}
};

class SceneSpecError : public Error {
public:
    explicit SceneSpecError(const std::string& msg) : Error("scene spec error: " + msg, 2) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error("contract error: " + msg, 4) {}
};

} // namespace s4tk
