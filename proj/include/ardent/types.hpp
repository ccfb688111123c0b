#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ardent {

using ExplainerId = std::size_t;
using ContextId = std::size_t;
using ActionId = std::size_t;

// Error hierarchy. Every failure raised by the library derives from Error so
// callers (CLI, HTTP layer) can map categories onto exit codes / status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class InvalidPropensity : public Error {
 public:
  using Error::Error;
};

class ProtocolViolation : public Error {
 public:
  using Error::Error;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class TooLarge : public Error {
 public:
  using Error::Error;
};

class TuningFailure : public Error {
 public:
  explicit TuningFailure(const std::string& what, double acceptance)
      : Error(what), acceptance_(acceptance) {}
  double acceptance() const { return acceptance_; }

 private:
  double acceptance_;
};

// Cardinalities of the explainer, context and action sets.
struct Dims {
  std::size_t n_explainers = 1;
  std::size_t n_contexts = 1;
  std::size_t n_actions = 2;

  std::size_t size() const { return n_explainers * n_contexts * n_actions; }

  // Flat row-major index of (e, x, a).
  std::size_t index(ExplainerId e, ContextId x, ActionId a) const {
    return (e * n_contexts + x) * n_actions + a;
  }

  void validate() const {
    if (n_explainers < 1 || n_contexts < 1)
      throw InvalidArgument("dims: explainer and context counts must be >= 1");
    if (n_actions < 2)
      throw InvalidArgument("dims: a decision problem needs at least 2 actions");
  }

  bool operator==(const Dims&) const = default;
};

}  // namespace ardent
