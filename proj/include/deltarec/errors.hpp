#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deltarec {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or size mismatch between inputs.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Factorization or iterative solver could not meet its contract.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent external data (files, containers).
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training blow-up; carries the loss trace observed up to the failure.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace deltarec
