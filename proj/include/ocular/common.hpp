#pragma once

#include <stdexcept>
#include <string>

namespace ocular {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File-system level failures (missing file, unwritable directory, short read).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Malformed content in an otherwise readable file (bad magic, bad token, bad value).
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Numerical failures: training divergence, degenerate statistical tests.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace ocular
