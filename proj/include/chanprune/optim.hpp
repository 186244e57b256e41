#pragma once

#include <span>

#include "chanprune/tensor.hpp"

namespace chanprune {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
};

/// One in-place SGD update (PyTorch semantics):
///   g <- grad + decay * p;  v <- mu * v + g;  step = nesterov ? g + mu * v : v;  p -= lr * step.
/// Throws StateError if any parameter has no gradient.
void sgd_step(std::span<Parameter* const> params, const SgdOptions& options);

}  // namespace chanprune
