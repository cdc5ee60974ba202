#pragma once

#include <stdexcept>
#include <string>

namespace cnnga {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A genome does not fit the search space it is used with.
class InvalidGenome : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// An API was used out of order (backward before forward, unevaluated individual, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed, missing or unusable input data.
class DataError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Raised by the evolution loop when a fitness evaluation fails; carries the genome key.
class EvaluationError : public Error {
public:
    EvaluationError(std::string genome_key, const std::string& what)
        : Error("evaluation of genome " + genome_key + " failed: " + what), key_(std::move(genome_key)) {}

    const std::string& genome_key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace cnnga
