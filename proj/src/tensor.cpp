#include "chanprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chanprune/errors.hpp"

namespace chanprune {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), values(shape_size(shape), fill) {
  for (auto extent : shape)
    if (extent == 0) throw ConfigError("tensor extents must be positive: " + shape_str(shape));
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape_size(shape))
    throw ConfigError("tensor of shape " + shape_str(shape) + " given " +
                      std::to_string(values.size()) + " values");
}

std::span<double> Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  return grad;
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  auto finite = [](double x) { return std::isfinite(x); };
  return std::all_of(values.begin(), values.end(), finite) &&
         std::all_of(grad.begin(), grad.end(), finite);
}

}  // namespace chanprune
