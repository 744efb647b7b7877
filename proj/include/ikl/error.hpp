#pragma once

#include <stdexcept>
#include <string>

namespace ikl {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument or precondition (negative radius, M < 2, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Vector or matrix shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A kernel produced a non-finite value at an occurring distance.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, int i, int ip, double r)
      : Error(what), agent(i), other(ip), distance(r) {}

  int agent;
  int other;
  double distance;
};

// ODE integration failed; carries the last time at which the state was good.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double last_good)
      : Error(what), last_good_time(last_good) {}

  double last_good_time;
};

// Malformed files or configuration.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ikl
