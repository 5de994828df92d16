// Copyright (c) The moesim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace moesim {

enum class ErrorKind { InputDomain, Schema, Config, Infeasible, Runtime };

/// Base class for every error raised by the library. The kind drives the
/// CLI exit code mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InputDomainError : public Error {
 public:
  explicit InputDomainError(const std::string& what)
      : Error(ErrorKind::InputDomain, what) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what)
      : Error(ErrorKind::Schema, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::Config, what) {}
};

class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what)
      : Error(ErrorKind::Infeasible, what) {}
};

}  // namespace moesim
