#pragma once

#include <stdexcept>
#include <string>

namespace t2l {

/// Tensor extents or adapter dims that do not line up.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Token or dictionary index outside its valid range.
class IndexError : public std::out_of_range {
   public:
    using std::out_of_range::out_of_range;
};

/// Caller violated an operation precondition (non-scalar loss, empty mask, ...).
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

/// Invalid model / task / training configuration.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// Requested more distinct items than a generator can produce.
class CapacityError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Bad user-supplied input (empty description, malformed text file, ...).
class InputError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A quantity that is mathematically undefined for the given input
/// (cosine of a zero vector, correlation of a constant series).
class UndefinedError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

/// Malformed or incompatible on-disk artifact. Subclasses name the cause.
class FileFormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};
class BadMagicError : public FileFormatError {
   public:
    using FileFormatError::FileFormatError;
};
class VersionError : public FileFormatError {
   public:
    using FileFormatError::FileFormatError;
};
class FingerprintError : public FileFormatError {
   public:
    using FileFormatError::FileFormatError;
};
class TruncatedFileError : public FileFormatError {
   public:
    using FileFormatError::FileFormatError;
};

/// Loss became non-finite during optimization.
class TrainingError : public std::runtime_error {
   public:
    TrainingError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
    std::size_t step() const { return step_; }

   private:
    std::size_t step_;
};

}  // namespace t2l
