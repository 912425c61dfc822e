#pragma once

#include <stdexcept>
#include <string>

namespace dasunet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or channel counts do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid scalar argument (negative threshold, non-positive step, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unpaired, missing or undecodable dataset file.
class DatasetError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// The classical solver detected an energy increase it cannot explain.
class SolverError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace dasunet
