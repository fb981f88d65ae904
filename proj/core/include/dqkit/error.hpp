#pragma once

#include <stdexcept>
#include <string>

namespace dqkit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or probability violations in user supplied models. `axis` names the
// offending dimension ("states", "actions", "P[1] row 3", ...).
class ModelError : public Error {
public:
    ModelError(std::string axis, const std::string& what)
        : Error(what + " (axis: " + axis + ")"), axis_(std::move(axis)) {}
    const std::string& axis() const noexcept { return axis_; }

private:
    std::string axis_;
};

class SingularSystemError : public Error {
public:
    using Error::Error;
};

class AbsorptionUnreachable : public Error {
public:
    AbsorptionUnreachable() : Error("absorption unreachable") {}
};

class ErgodicityViolated : public Error {
public:
    ErgodicityViolated() : Error("ergodicity violated") {}
};

class SupportViolation : public Error {
public:
    SupportViolation() : Error("support violation") {}
};

class EmptyDatasetError : public Error {
public:
    EmptyDatasetError() : Error("empty dataset") {}
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace dqkit
