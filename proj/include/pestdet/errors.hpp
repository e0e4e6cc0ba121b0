#ifndef PESTDET_ERRORS_HPP
#define PESTDET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pestdet {

/// Tensor shapes that do not fit the operation (rank, channel count, spatial size).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A kernel produced NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model graph is structurally invalid or does not match supplied weights.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable file content (image, weights, config, payload).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pestdet

#endif  // PESTDET_ERRORS_HPP
