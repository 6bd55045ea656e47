#pragma once

#include <stdexcept>
#include <string>

namespace muvi {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeMismatch : public Error {
public:
  explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

class PatchTooLarge : public Error {
public:
  explicit PatchTooLarge(const std::string& msg) : Error("patch too large: " + msg) {}
};

class OutOfBounds : public Error {
public:
  explicit OutOfBounds(const std::string& msg) : Error("out of bounds: " + msg) {}
};

class CoverageGap : public Error {
public:
  explicit CoverageGap(const std::string& msg) : Error("coverage gap: " + msg) {}
};

class DomainError : public Error {
public:
  explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

class StateMismatch : public Error {
public:
  explicit StateMismatch(const std::string& msg) : Error("state mismatch: " + msg) {}
};

class NormUnsupported : public Error {
public:
  explicit NormUnsupported(const std::string& msg) : Error("normalization unsupported: " + msg) {}
};

class EmptyMask : public Error {
public:
  explicit EmptyMask(const std::string& msg) : Error("empty mask: " + msg) {}
};

class EmptyInput : public Error {
public:
  explicit EmptyInput(const std::string& msg) : Error("empty input: " + msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

}  // namespace muvi
