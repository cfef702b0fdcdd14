#pragma once

#include <stdexcept>
#include <string>

namespace icmoe {

// Exit-code-mapped error categories: config -> 1, I/O -> 2, invariant -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvariantBreach : std::runtime_error {
    explicit InvariantBreach(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace icmoe
