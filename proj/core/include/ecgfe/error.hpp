#pragma once

#include <stdexcept>
#include <string>

namespace ecgfe {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk data (manifests, signal files, checkpoints).
class FormatError : public Error {
public:
  using Error::Error;
};

/// A precondition on an argument was violated.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A computation is undefined for the given input (e.g. AUROC on one class).
class UndefinedMetric : public Error {
public:
  using Error::Error;
};

} // namespace ecgfe
