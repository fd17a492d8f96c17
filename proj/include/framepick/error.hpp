#pragma once

#include <stdexcept>
#include <string>

namespace framepick {

// Every failure raised by the library derives from Error so callers can
// catch one type at the CLI boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(std::string layer, const std::string& what)
      : Error("non-finite value in " + layer + ": " + what), layer_(std::move(layer)) {}
  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string line)
      : Error(what + " (line: " + line + ")"), line_(std::move(line)) {}
  const std::string& line() const noexcept { return line_; }

 private:
  std::string line_;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

// An error reported by the far side of an environment connection.
class RemoteError : public Error {
 public:
  RemoteError(std::string kind, const std::string& what)
      : Error("remote " + kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

}  // namespace framepick
