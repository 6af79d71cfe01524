#ifndef AGESTACK_ERRORS_HPP
#define AGESTACK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace agestack {

// Error taxonomy. The CLI maps parse/validation/config problems to exit
// code 2 and everything else to exit code 1.

struct invalid_input_error : std::runtime_error {
    explicit invalid_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct shape_error : invalid_input_error {
    explicit shape_error(const std::string& msg) : invalid_input_error(msg) {}
};

// Malformed file contents; message names the offending row/column where known.
struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally well-formed input that violates a domain invariant.
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Requested feature-column set is empty (e.g. the variance filter removed
// every column). Callers usually fall back to an intercept-only model.
struct empty_feature_error : std::runtime_error {
    explicit empty_feature_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad experiment configuration (unknown keys, missing files, invalid values).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace agestack

#endif
