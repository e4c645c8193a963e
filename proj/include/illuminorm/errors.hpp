#pragma once

#include <stdexcept>
#include <string>

namespace illuminorm {

/// Invalid configuration value (window size, architecture, augmentation spec, ...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller violated an operation's precondition (shape mismatch, empty index, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// On-disk data could not be read or does not satisfy the dataset layout.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// No scene satisfies a triplet policy predicate.
class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace illuminorm
