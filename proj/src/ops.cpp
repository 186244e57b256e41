#include "chanprune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "chanprune/errors.hpp"
#include "chanprune/kernels.hpp"

namespace chanprune::ops {
namespace {

std::string quote(std::string_view s) { return "'" + std::string(s) + "'"; }

// Splits [N,C] or [N,C,H,W] into (N, C, spatial).
struct Layout {
  std::size_t batch, channels, spatial;
};

Layout layout_of(const Tensor& t, std::string_view layer) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1), 1};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)};
  throw ConfigError("layer " + quote(layer) + ": expected rank 2 or 4 input, got " + shape_str(t.shape));
}

void require_rank4(const Tensor& t, std::string_view layer) {
  if (t.rank() != 4)
    throw ConfigError("layer " + quote(layer) + ": expected [N,C,H,W] input, got " + shape_str(t.shape));
}

kernels::ConvShape conv_shape(const Tensor& input, const Tensor& weight, std::size_t stride,
                              std::size_t padding) {
  kernels::ConvShape s;
  s.batch = input.dim(0);
  s.in_channels = input.dim(1);
  s.in_height = input.dim(2);
  s.in_width = input.dim(3);
  s.out_channels = weight.dim(0);
  s.kernel = weight.dim(2);
  s.stride = stride;
  s.padding = padding;
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, std::size_t stride,
              std::size_t padding, std::string_view layer) {
  require_rank4(input, layer);
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
    throw ConfigError("layer " + quote(layer) + ": weight must be [Cout,Cin,p,p], got " +
                      shape_str(weight.shape));
  if (weight.dim(1) != input.dim(1))
    throw ConfigError("layer " + quote(layer) + ": input has " + std::to_string(input.dim(1)) +
                      " channels, weight expects " + std::to_string(weight.dim(1)));
  if (stride < 1) throw ConfigError("layer " + quote(layer) + ": stride must be >= 1");
  if (bias && bias->size() != weight.dim(0))
    throw ConfigError("layer " + quote(layer) + ": bias length does not match Cout");
  if (input.dim(2) + 2 * padding < weight.dim(2) || input.dim(3) + 2 * padding < weight.dim(3))
    throw ConfigError("layer " + quote(layer) + ": kernel larger than padded input");
  const auto s = conv_shape(input, weight, stride, padding);
  Tensor out({s.batch, s.out_channels, s.out_height(), s.out_width()});
  kernels::parallel::conv2d_forward(s, input.values, weight.values,
                                    bias ? std::span<const double>(bias->values) : std::span<const double>(),
                                    out.values);
  return out;
}

void conv2d_backward(const Tensor& output, Tensor& input, Tensor& weight, Tensor* bias,
                     std::size_t stride, std::size_t padding, bool propagate_input) {
  const auto s = conv_shape(input, weight, stride, padding);
  const std::size_t hw = s.out_height() * s.out_width();
  kernels::parallel::conv2d_backward_weight(s, input.values, output.grad, weight.ensure_grad());
  if (bias) {
    auto db = bias->ensure_grad();
    for (std::size_t n = 0; n < s.batch; ++n)
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        const double* g = output.grad.data() + (n * s.out_channels + co) * hw;
        double acc = 0.0;
        for (std::size_t j = 0; j < hw; ++j) acc += g[j];
        db[co] += acc;
      }
  }
  if (propagate_input)
    kernels::parallel::conv2d_backward_input(s, weight.values, output.grad, input.ensure_grad());
}

Tensor batchnorm2d(const Tensor& input, const Tensor& scale, const Tensor& shift,
                   BatchNormStats& stats, Mode mode, double momentum, double eps,
                   BatchNormCache* cache, std::string_view layer) {
  if (mode == Mode::eval) return batchnorm2d_eval(input, scale, shift, stats, eps, cache, layer);
  const auto [n, c, sp] = layout_of(input, layer);
  if (scale.size() != c || shift.size() != c)
    throw ConfigError("layer " + quote(layer) + ": scale/shift length must equal channel count " +
                      std::to_string(c));
  if (!stats.initialized()) {
    stats.mean.assign(c, 0.0);
    stats.var.assign(c, 1.0);
  }
  const double m = static_cast<double>(n * sp);
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0);
  Tensor out(input.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* x = input.values.data() + (b * c + ch) * sp;
      for (std::size_t j = 0; j < sp; ++j) sum += x[j];
    }
    const double mu = sum / m;
    double sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* x = input.values.data() + (b * c + ch) * sp;
      for (std::size_t j = 0; j < sp; ++j) sq += (x[j] - mu) * (x[j] - mu);
    }
    const double var = sq / m;
    mean[ch] = mu;
    inv_std[ch] = 1.0 / std::sqrt(var + eps);
    const double unbiased = m > 1 ? sq / (m - 1) : var;
    stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * mu;
    stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * unbiased;
    const double g = scale.values[ch] * inv_std[ch], beta = shift.values[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const double* x = input.values.data() + (b * c + ch) * sp;
      double* y = out.values.data() + (b * c + ch) * sp;
      for (std::size_t j = 0; j < sp; ++j) y[j] = (x[j] - mu) * g + beta;
    }
  }
  if (cache) *cache = {Mode::train, std::move(mean), std::move(inv_std)};
  return out;
}

Tensor batchnorm2d_eval(const Tensor& input, const Tensor& scale, const Tensor& shift,
                        const BatchNormStats& stats, double eps, BatchNormCache* cache,
                        std::string_view layer) {
  const auto [n, c, sp] = layout_of(input, layer);
  if (scale.size() != c || shift.size() != c)
    throw ConfigError("layer " + quote(layer) + ": scale/shift length must equal channel count " +
                      std::to_string(c));
  if (!stats.initialized())
    throw StateError("layer " + quote(layer) + ": eval mode requires initialised running statistics");
  if (stats.mean.size() != c || stats.var.size() != c)
    throw ConfigError("layer " + quote(layer) + ": running statistics length mismatch");
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + eps);
  Tensor out(input.shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g = scale.values[ch] * inv_std[ch], beta = shift.values[ch], mu = stats.mean[ch];
      const double* x = input.values.data() + (b * c + ch) * sp;
      double* y = out.values.data() + (b * c + ch) * sp;
      for (std::size_t j = 0; j < sp; ++j) y[j] = (x[j] - mu) * g + beta;
    }
  if (cache) *cache = {Mode::eval, stats.mean, std::move(inv_std)};
  return out;
}

void batchnorm2d_backward(const Tensor& output, Tensor& input, Tensor& scale, Tensor& shift,
                          const BatchNormCache& cache) {
  const auto [n, c, sp] = layout_of(input, "batchnorm");
  auto dscale = scale.ensure_grad();
  auto dshift = shift.ensure_grad();
  auto dx = input.ensure_grad();
  const double m = static_cast<double>(n * sp);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mu = cache.mean[ch], is = cache.inv_std[ch], g = scale.values[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * sp;
      for (std::size_t j = 0; j < sp; ++j) {
        const double dy = output.grad[off + j];
        sum_dy += dy;
        sum_dy_xhat += dy * (input.values[off + j] - mu) * is;
      }
    }
    dscale[ch] += sum_dy_xhat;
    dshift[ch] += sum_dy;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * sp;
      for (std::size_t j = 0; j < sp; ++j) {
        const double dy = output.grad[off + j];
        if (cache.mode == Mode::eval) {
          dx[off + j] += dy * g * is;
        } else {
          const double xhat = (input.values[off + j] - mu) * is;
          dx[off + j] += g * is * (dy - sum_dy / m - xhat * sum_dy_xhat / m);
        }
      }
    }
  }
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape);
  for (std::size_t i = 0; i < input.size(); ++i) out.values[i] = input.values[i] > 0.0 ? input.values[i] : 0.0;
  return out;
}

void relu_backward(const Tensor& output, Tensor& input) {
  auto dx = input.ensure_grad();
  for (std::size_t i = 0; i < input.size(); ++i)
    if (input.values[i] > 0.0) dx[i] += output.grad[i];
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding,
                 std::vector<std::size_t>* argmax) {
  require_rank4(input, "maxpool");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  const long pad = static_cast<long>(padding);
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* x = input.values.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long iy = static_cast<long>(y * stride + ky) - pad;
            const long ix = static_cast<long>(xo * stride + kx) - pad;
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            const std::size_t i = iy * w + ix;
            if (x[i] > best) {
              best = x[i];
              best_i = i;
            }
          }
        const std::size_t o = p * oh * ow + y * ow + xo;
        out.values[o] = best;
        if (argmax) (*argmax)[o] = p * h * w + best_i;
      }
  }
  return out;
}

void maxpool2d_backward(const Tensor& output, Tensor& input, std::span<const std::size_t> argmax) {
  auto dx = input.ensure_grad();
  for (std::size_t o = 0; o < output.size(); ++o) dx[argmax[o]] += output.grad[o];
}

Tensor avgpool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  require_rank4(input, "avgpool");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx)
            acc += input.values[p * h * w + (y * stride + ky) * w + x * stride + kx];
        out.values[p * oh * ow + y * ow + x] = acc * inv;
      }
  return out;
}

void avgpool2d_backward(const Tensor& output, Tensor& input, std::size_t kernel, std::size_t stride) {
  auto dx = input.ensure_grad();
  const std::size_t h = input.dim(2), w = input.dim(3), oh = output.dim(2), ow = output.dim(3);
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (std::size_t p = 0; p < input.dim(0) * input.dim(1); ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const double g = output.grad[p * oh * ow + y * ow + x] * inv;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) dx[p * h * w + (y * stride + ky) * w + x * stride + kx] += g;
      }
}

Tensor global_avgpool(const Tensor& input) {
  require_rank4(input, "global_avgpool");
  const std::size_t n = input.dim(0), c = input.dim(1), sp = input.dim(2) * input.dim(3);
  Tensor out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t j = 0; j < sp; ++j) acc += input.values[p * sp + j];
    out.values[p] = acc / static_cast<double>(sp);
  }
  return out;
}

void global_avgpool_backward(const Tensor& output, Tensor& input) {
  auto dx = input.ensure_grad();
  const std::size_t sp = input.dim(2) * input.dim(3);
  for (std::size_t p = 0; p < output.size(); ++p) {
    const double g = output.grad[p] / static_cast<double>(sp);
    for (std::size_t j = 0; j < sp; ++j) dx[p * sp + j] += g;
  }
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor* bias, std::string_view layer) {
  if (input.rank() != 2 || weight.rank() != 2 || weight.dim(1) != input.dim(1))
    throw ConfigError("layer " + quote(layer) + ": linear expects [N,Cin] x [Cout,Cin], got " +
                      shape_str(input.shape) + " x " + shape_str(weight.shape));
  if (bias && bias->size() != weight.dim(0))
    throw ConfigError("layer " + quote(layer) + ": bias length does not match Cout");
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  Tensor out({n, cout});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = bias ? bias->values[o] : 0.0;
      for (std::size_t i = 0; i < cin; ++i) acc += input.values[b * cin + i] * weight.values[o * cin + i];
      out.values[b * cout + o] = acc;
    }
  return out;
}

void linear_backward(const Tensor& output, Tensor& input, Tensor& weight, Tensor* bias,
                     bool propagate_input) {
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  auto dw = weight.ensure_grad();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t b = 0; b < n; ++b) {
      const double g = output.grad[b * cout + o];
      for (std::size_t i = 0; i < cin; ++i) dw[o * cin + i] += g * input.values[b * cin + i];
    }
  if (bias) {
    auto db = bias->ensure_grad();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < cout; ++o) db[o] += output.grad[b * cout + o];
  }
  if (propagate_input) {
    auto dx = input.ensure_grad();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < cout; ++o) {
        const double g = output.grad[b * cout + o];
        for (std::size_t i = 0; i < cin; ++i) dx[b * cin + i] += g * weight.values[o * cin + i];
      }
  }
}

Tensor residual_add(const Tensor& a, const Tensor& b, std::string_view producer_a,
                    std::string_view producer_b) {
  if (a.shape != b.shape)
    throw ChannelAlignmentError("residual add: " + quote(producer_a) + " produces " + shape_str(a.shape) +
                                " but " + quote(producer_b) + " produces " + shape_str(b.shape));
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] + b.values[i];
  return out;
}

void residual_add_backward(const Tensor& output, Tensor& a, Tensor& b) {
  auto da = a.ensure_grad();
  for (std::size_t i = 0; i < output.size(); ++i) da[i] += output.grad[i];
  auto db = b.ensure_grad();
  for (std::size_t i = 0; i < output.size(); ++i) db[i] += output.grad[i];
}

Tensor channel_concat(std::span<const Tensor* const> inputs) {
  if (inputs.empty()) throw ConfigError("channel_concat: no inputs");
  const Tensor& first = *inputs.front();
  require_rank4(first, "concat");
  std::size_t channels = 0;
  for (const Tensor* t : inputs) {
    require_rank4(*t, "concat");
    if (t->dim(0) != first.dim(0) || t->dim(2) != first.dim(2) || t->dim(3) != first.dim(3))
      throw ConfigError("channel_concat: spatial/batch extents differ: " + shape_str(t->shape) + " vs " +
                        shape_str(first.shape));
    channels += t->dim(1);
  }
  const std::size_t n = first.dim(0), sp = first.dim(2) * first.dim(3);
  Tensor out({n, channels, first.dim(2), first.dim(3)});
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = 0;
    for (const Tensor* t : inputs) {
      const std::size_t c = t->dim(1);
      std::copy_n(t->values.data() + b * c * sp, c * sp, out.values.data() + (b * channels + offset) * sp);
      offset += c;
    }
  }
  return out;
}

Tensor channel_select(const Tensor& input, std::span<const long> gather) {
  const auto [n, c, sp] = layout_of(input, "channel_select");
  Shape shape = input.shape;
  shape[1] = gather.size();
  Tensor out(shape);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < gather.size(); ++o) {
      if (gather[o] < 0) continue;
      if (static_cast<std::size_t>(gather[o]) >= c)
        throw ConfigError("channel_select: index " + std::to_string(gather[o]) + " out of range");
      std::copy_n(input.values.data() + (b * c + gather[o]) * sp, sp,
                  out.values.data() + (b * gather.size() + o) * sp);
    }
  return out;
}

void channel_select_backward(const Tensor& output, Tensor& input, std::span<const long> gather) {
  const auto [n, c, sp] = layout_of(input, "channel_select");
  auto dx = input.ensure_grad();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < gather.size(); ++o) {
      if (gather[o] < 0) continue;
      const double* g = output.grad.data() + (b * gather.size() + o) * sp;
      double* d = dx.data() + (b * c + gather[o]) * sp;
      for (std::size_t j = 0; j < sp; ++j) d[j] += g[j];
    }
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ConfigError("softmax_cross_entropy: logits " + shape_str(logits.shape) + " vs " +
                      std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.values.data() + b * k;
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k)
      throw ConfigError("softmax_cross_entropy: label out of range");
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    total += std::log(sum) + zmax - z[labels[b]];
  }
  return total / static_cast<double>(n);
}

void softmax_cross_entropy_backward(Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  auto g = logits.ensure_grad();
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.values.data() + b * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(z[j] - zmax) / sum;
      g[b * k + j] = (p - (static_cast<int>(j) == labels[b] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.values.data() + b * k;
    if (static_cast<int>(std::max_element(z, z + k) - z) == labels[b]) ++correct;
  }
  return correct;
}

void zero_channels(Tensor& t, std::span<const std::size_t> channels) {
  if (channels.empty()) return;
  const auto [n, c, sp] = layout_of(t, "mask");
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch : channels) std::fill_n(t.values.data() + (b * c + ch) * sp, sp, 0.0);
}

}  // namespace chanprune::ops
