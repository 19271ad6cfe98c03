#pragma once

#include <stdexcept>
#include <string>

namespace apnt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Shapes, grids or record layouts that do not fit together.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Malformed bytes in an on-disk container.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file or archive entry could not be found or read.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

void log_warning(const std::string& message);

// Warnings go to stderr unless silenced (tests silence them).
void set_warnings_enabled(bool enabled);

}  // namespace apnt
