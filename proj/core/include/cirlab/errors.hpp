#pragma once

#include <stdexcept>
#include <string>

namespace cirl {

// Invalid configuration values (zero classes, bad weights, unparsable files).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Operand dimensions do not line up.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A label or pseudo-label outside the logit range.
class IndexError : public std::out_of_range {
public:
  using std::out_of_range::out_of_range;
};

// NaN/Inf in a loss, gradient or parameter.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Stream construction ran out of samples or could not satisfy its constraints.
class GenerationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class BufferError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ExperienceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or version-incompatible artifact files.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace cirl
