#pragma once

#include <cstddef>
#include <span>

// Convolution kernels. `reference` is a direct serial loop nest kept as the
// test oracle; `parallel` lowers to im2col + blocked GEMM with OpenMP over
// output rows. Both accumulate every output element in a fixed order, so
// results are reproducible regardless of thread count.
namespace chanprune::kernels {

struct ConvShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_height = 1;
  std::size_t in_width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (in_height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (in_width + 2 * padding - kernel) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * in_height * in_width; }
  std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t output_size() const { return batch * out_channels * out_height() * out_width(); }
};

namespace reference {

// out = conv(in, weight) + bias; bias may be empty.
void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
// Accumulates (+=) into weight_grad.
void conv2d_backward_weight(const ConvShape& s, std::span<const double> in,
                            std::span<const double> out_grad, std::span<double> weight_grad);
// Accumulates (+=) into in_grad.
void conv2d_backward_input(const ConvShape& s, std::span<const double> weight,
                           std::span<const double> out_grad, std::span<double> in_grad);

}  // namespace reference

namespace parallel {

void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_weight(const ConvShape& s, std::span<const double> in,
                            std::span<const double> out_grad, std::span<double> weight_grad);
void conv2d_backward_input(const ConvShape& s, std::span<const double> weight,
                           std::span<const double> out_grad, std::span<double> in_grad);

}  // namespace parallel

}  // namespace chanprune::kernels
