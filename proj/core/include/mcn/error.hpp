#pragma once

#include <stdexcept>
#include <string>

namespace mcn {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor extents do not satisfy an operator's contract.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A scalar parameter is outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Non-finite values or a failed numerical precondition.
class NumericError : public Error {
public:
    using Error::Error;
};

// Misuse of an API, e.g. calling backward() on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

// File contents do not match the expected on-disk format.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace mcn
