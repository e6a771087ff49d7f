#pragma once

#include <stdexcept>

namespace reprompt {

/// Invalid or inconsistent configuration. CLI exit code 1.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent input data. CLI exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A code that the cohort vocabulary does not contain.
class VocabularyError : public DataError {
public:
    using DataError::DataError;
};

/// NaN/Inf in a forward pass or a diverging loss. CLI exit code 2.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace reprompt
