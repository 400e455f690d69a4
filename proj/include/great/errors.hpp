#pragma once

#include <stdexcept>
#include <string>

namespace great {

// Bad user input: malformed config, missing file, invalid CLI arguments.
// Maps to process exit code 1.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value detected during a forward or backward pass, or an
// optimizer step fed a diverged gradient. Maps to process exit code 2.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or precondition violation in an op or layer.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace great
