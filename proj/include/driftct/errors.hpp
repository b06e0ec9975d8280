#pragma once

#include <stdexcept>
#include <string>

namespace driftct {

// Bad input from the caller: mismatched shapes, invalid values, bad arguments.
class ValueError : public std::invalid_argument {
public:
    explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

class ShapeError : public ValueError {
public:
    explicit ShapeError(const std::string& msg) : ValueError(msg) {}
};

// Malformed on-disk data: unreadable volumes, checkpoints, configs.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A broken internal invariant. Maps to exit code 2 in the CLI.
class InternalError : public std::logic_error {
public:
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace driftct
