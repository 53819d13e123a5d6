#pragma once

#include <stdexcept>
#include <string>

namespace smmqg {

/// Base class for every error raised by the library. Pipeline-level
/// rejections are values (see pipeline.hpp), not exceptions.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data: corpus records, config files, dataset rows.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An operation was applied to a source of the wrong modality.
class ModalityError : public Error {
public:
    using Error::Error;
};

/// A provider was asked for something it does not support.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// Backend communication failed after all retries.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Retryable backend failure. Thrown by backends, consumed by the retry loop.
class TransientError : public Error {
public:
    using Error::Error;
};

/// A backend returned data violating its declared contract.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Model output that could not be interpreted.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Bad template, missing variable.
class TemplateError : public Error {
public:
    using Error::Error;
};

}  // namespace smmqg
