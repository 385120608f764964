#pragma once

#include <stdexcept>
#include <string>

namespace zsdg {

// Error families map onto CLI exit codes: Config -> 1, Data/Stats/NonFinite -> 2,
// Io/Format -> 3. Shape errors are programming errors and surface as 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class StatsError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace zsdg
