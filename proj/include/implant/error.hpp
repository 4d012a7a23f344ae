#pragma once

#include <stdexcept>
#include <string>

namespace implant {

// Precondition or invariant violation on caller-supplied data.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File could not be opened, read, or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File was readable but its contents are malformed.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical stage (rendering, registration, morphing, ICP) could not proceed.
class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Case/CLI configuration is missing a field or has an invalid value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace implant
