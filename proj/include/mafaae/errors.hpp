#pragma once

#include <stdexcept>
#include <string>

namespace mafaae {

/// Invalid input data or configuration. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A non-finite value appeared during a numeric computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent live stream.
class StreamError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mafaae
