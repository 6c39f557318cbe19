#pragma once

#include <stdexcept>
#include <string>

namespace mapo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

class EndpointError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A loss term evaluated to NaN or infinity; training stops.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& component, double value)
      : Error("non-finite " + component + " loss: " + std::to_string(value)), component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

class MissingUpstreamError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mapo
