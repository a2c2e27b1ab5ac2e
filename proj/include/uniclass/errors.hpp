#pragma once

#include <stdexcept>
#include <string>

namespace uniclass {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible matrix shapes (matmul inner mismatch, non-scalar backward, ...).
struct DimensionError : Error {
    using Error::Error;
};

// Invalid numeric parameter (non-positive temperature, out-of-range epoch, ...).
struct ParameterError : Error {
    using Error::Error;
};

// Elementwise input outside an op's domain (log of a non-positive entry, ...).
struct DomainError : Error {
    using Error::Error;
};

// A normalization slice whose mass is exactly zero: a fully dead class or sample.
struct DegenerateSliceError : Error {
    using Error::Error;
};

// A row with (near-)zero Euclidean norm fed to row normalization.
struct DegenerateRowError : Error {
    using Error::Error;
};

// Batch statistics requested on a batch too small to provide them.
struct BatchTooSmallError : Error {
    using Error::Error;
};

// Bad run/model/loss configuration or malformed config file.
struct ConfigError : Error {
    using Error::Error;
};

// Training aborted on a non-finite loss; message carries the diagnostic dump.
struct NanAbortError : Error {
    using Error::Error;
};

}  // namespace uniclass
