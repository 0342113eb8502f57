#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rbsde {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A survival probability hit zero or below; the random-time model is
// inadmissible (G must stay positive).
class PositivityViolation : public Error {
 public:
  PositivityViolation(const std::string& msg, int node) : Error(msg), node_id(node) {}
  int node_id;
};

// Shape or kind mismatch between processes and trees.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Step index outside [0, N].
class StepOutOfRange : public Error {
 public:
  using Error::Error;
};

// A G-process handed to the G->F decomposition keeps moving after
// absorption.
class NotStopped : public Error {
 public:
  NotStopped(const std::string& msg, int state) : Error(msg), state_id(state) {}
  int state_id;
};

// The input to the martingale transform is not a martingale.
class InputNotMartingale : public Error {
 public:
  InputNotMartingale(const std::string& msg, double dev) : Error(msg), max_deviation(dev) {}
  double max_deviation;
};

// Exhaustive stopping-rule enumeration requested on a tree too deep for it.
class DepthTooLarge : public Error {
 public:
  using Error::Error;
};

// Picard iteration failed to reach the tolerance; carries the delta trace.
class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& msg, std::vector<double> trace)
      : Error(msg), deltas(std::move(trace)) {}
  std::vector<double> deltas;
};

// A solution component violates a structural invariant; carries the worst
// offending state.
class InvariantViolation : public Error {
 public:
  InvariantViolation(const std::string& msg, int state, double dev)
      : Error(msg), state_id(state), deviation(dev) {}
  int state_id;
  double deviation;
};

// Terminal payoff lies below the barrier somewhere.
class BarrierAboveTerminal : public Error {
 public:
  using Error::Error;
};

// A truncation level exceeds the tree depth.
class LevelExceedsDepth : public Error {
 public:
  using Error::Error;
};

// An inequality with an explicit constant failed; a genuine red flag.
class ExplicitConstantViolated : public Error {
 public:
  ExplicitConstantViolated(const std::string& msg, double lhs_, double rhs_)
      : Error(msg), lhs(lhs_), rhs(rhs_) {}
  double lhs;
  double rhs;
};

// Bad experiment configuration (parse or validation).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A hard assertion of an experiment task failed.
class TaskFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace rbsde
