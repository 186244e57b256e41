#pragma once

#include <stdexcept>
#include <string>

namespace chanprune {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or attribute mismatch; the message names the offending layer.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Residual add or group members disagree on channel layout.
class ChannelAlignmentError : public Error {
 public:
  using Error::Error;
};

// Graph shape the pruning machinery refuses to handle (e.g. concat consumers).
class TopologyError : public Error {
 public:
  using Error::Error;
};

// Operation requires state that was never set up (e.g. BN running statistics).
class StateError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  using Error::Error;
};

class PlanError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Global threshold search ran out of iterations; carries the closest rate seen.
class SearchError : public Error {
 public:
  SearchError(const std::string& what, double best_theta, double best_rate)
      : Error(what), best_theta_(best_theta), best_rate_(best_rate) {}
  double best_theta() const noexcept { return best_theta_; }
  double best_rate() const noexcept { return best_rate_; }

 private:
  double best_theta_;
  double best_rate_;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

}  // namespace chanprune
