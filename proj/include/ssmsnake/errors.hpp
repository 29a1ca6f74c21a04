#pragma once

#include <stdexcept>
#include <string>

namespace ssmsnake {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not fit the operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced or consumed.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or unknown key.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A required file or directory is absent.
class MissingArtifact : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace ssmsnake
