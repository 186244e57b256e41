#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace chanprune {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient of the same
/// shape. An empty `grad` means no gradient has been requested yet.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool has_grad() const noexcept { return !grad.empty(); }

  /// Allocates a zero gradient on first use; returns it.
  std::span<double> ensure_grad();
  void zero_grad();
  void drop_grad() { grad.clear(); grad.shrink_to_fit(); }

  bool all_finite() const;
};

/// Trainable tensor plus optimizer state. The momentum buffer stays empty
/// until the first optimizer step touches it.
struct Parameter {
  Tensor tensor;
  std::vector<double> momentum;
  bool decay = true;

  Parameter() = default;
  explicit Parameter(Tensor t, bool decay_enabled = true)
      : tensor(std::move(t)), decay(decay_enabled) {}
};

}  // namespace chanprune
