#include "chanprune/optim.hpp"

#include "chanprune/errors.hpp"

namespace chanprune {

void sgd_step(std::span<Parameter* const> params, const SgdOptions& options) {
  for (const Parameter* p : params)
    if (!p->tensor.has_grad())
      throw StateError("sgd_step: parameter of shape " + shape_str(p->tensor.shape) + " has no gradient");

  for (Parameter* p : params) {
    auto& values = p->tensor.values;
    const auto& grad = p->tensor.grad;
    const double decay = p->decay ? options.weight_decay : 0.0;
    if (options.momentum != 0.0 && p->momentum.empty()) p->momentum.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      double g = grad[i] + decay * values[i];
      if (options.momentum != 0.0) {
        double& v = p->momentum[i];
        v = options.momentum * v + g;
        g = options.nesterov ? g + options.momentum * v : v;
      }
      values[i] -= options.lr * g;
    }
  }
}

}  // namespace chanprune
