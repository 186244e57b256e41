#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "chanprune/tensor.hpp"

// Layer operations of the differentiation engine. Every forward has a
// matching `_backward` that reads `output.grad` and accumulates (+=) into the
// grads of its inputs and parameters; channel_concat is forward-only.
namespace chanprune::ops {

enum class Mode { train, eval };

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, std::size_t stride,
              std::size_t padding, std::string_view layer = "conv2d");
void conv2d_backward(const Tensor& output, Tensor& input, Tensor& weight, Tensor* bias,
                     std::size_t stride, std::size_t padding, bool propagate_input = true);

/// Running statistics; empty vectors mean "never initialised".
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool initialized() const { return !mean.empty() && !var.empty(); }
};

struct BatchNormCache {
  Mode mode = Mode::eval;
  std::vector<double> mean;
  std::vector<double> inv_std;
};

/// Works on [N,C] and [N,C,H,W]. Train mode normalises with batch statistics
/// and folds them into `stats` (unbiased variance, PyTorch convention).
Tensor batchnorm2d(const Tensor& input, const Tensor& scale, const Tensor& shift,
                   BatchNormStats& stats, Mode mode, double momentum, double eps,
                   BatchNormCache* cache = nullptr, std::string_view layer = "batchnorm");
Tensor batchnorm2d_eval(const Tensor& input, const Tensor& scale, const Tensor& shift,
                        const BatchNormStats& stats, double eps, BatchNormCache* cache = nullptr,
                        std::string_view layer = "batchnorm");
void batchnorm2d_backward(const Tensor& output, Tensor& input, Tensor& scale, Tensor& shift,
                          const BatchNormCache& cache);

Tensor relu(const Tensor& input);
void relu_backward(const Tensor& output, Tensor& input);

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding,
                 std::vector<std::size_t>* argmax = nullptr);
void maxpool2d_backward(const Tensor& output, Tensor& input, std::span<const std::size_t> argmax);

Tensor avgpool2d(const Tensor& input, std::size_t kernel, std::size_t stride);
void avgpool2d_backward(const Tensor& output, Tensor& input, std::size_t kernel, std::size_t stride);

Tensor global_avgpool(const Tensor& input);
void global_avgpool_backward(const Tensor& output, Tensor& input);

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor* bias,
              std::string_view layer = "linear");
void linear_backward(const Tensor& output, Tensor& input, Tensor& weight, Tensor* bias,
                     bool propagate_input = true);

Tensor residual_add(const Tensor& a, const Tensor& b, std::string_view producer_a = "lhs",
                    std::string_view producer_b = "rhs");
void residual_add_backward(const Tensor& output, Tensor& a, Tensor& b);

Tensor channel_concat(std::span<const Tensor* const> inputs);

/// out channel c = input channel gather[c], or zeros where gather[c] < 0.
Tensor channel_select(const Tensor& input, std::span<const long> gather);
void channel_select_backward(const Tensor& output, Tensor& input, std::span<const long> gather);

/// Mean cross-entropy over the batch.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Sets logits.grad = (softmax - onehot) / N (overwrites).
void softmax_cross_entropy_backward(Tensor& logits, std::span<const int> labels);
std::size_t count_correct(const Tensor& logits, std::span<const int> labels);

/// Zeroes whole channels of an [N,C,...] tensor in place.
void zero_channels(Tensor& t, std::span<const std::size_t> channels);

}  // namespace chanprune::ops
