#pragma once

#include <stdexcept>
#include <string>

namespace ted {

// Malformed or unusable input data: corpus records, model files, checkpoints.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or missing prerequisite artifacts.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A violated internal invariant such as a non-finite gradient.
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ted
