#pragma once

#include <stdexcept>
#include <string>

namespace bargain {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parameter or share values outside the model's domain.
class DomainError : public Error {
public:
    using Error::Error;
};

// 1 + Gamma + Lambda <= 0, or a singular spillover system.
class SingularError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace bargain
