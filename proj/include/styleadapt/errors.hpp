#pragma once

#include <stdexcept>
#include <string>

namespace styleadapt {

// Every error raised by the library derives from Error so callers can map
// categories onto exit codes without catching std::exception wholesale.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error { using Error::Error; };
class CorruptionError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class PreconditionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ManifestError : public DataError { using DataError::DataError; };
class GenerationError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };

}  // namespace styleadapt
