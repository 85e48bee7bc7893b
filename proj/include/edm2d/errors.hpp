#pragma once

#include <stdexcept>
#include <string>

namespace edm2d {

/// Malformed configuration or violated precondition on user input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value became NaN/Inf or a sampler/trainer diverged.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or format failure while reading/writing artifacts.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace edm2d
