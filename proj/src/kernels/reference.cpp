#include "chanprune/kernels.hpp"

namespace chanprune::kernels::reference {

void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long pad = static_cast<long>(s.padding);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t co = 0; co < s.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < s.in_channels; ++ci)
            for (std::size_t ky = 0; ky < s.kernel; ++ky)
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long iy = static_cast<long>(y * s.stride + ky) - pad;
                const long ix = static_cast<long>(x * s.stride + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.in_height) ||
                    ix >= static_cast<long>(s.in_width))
                  continue;
                acc += in[((n * s.in_channels + ci) * s.in_height + iy) * s.in_width + ix] *
                       weight[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
              }
          if (!bias.empty()) acc += bias[co];
          out[((n * s.out_channels + co) * oh + y) * ow + x] = acc;
        }
}

void conv2d_backward_weight(const ConvShape& s, std::span<const double> in,
                            std::span<const double> out_grad, std::span<double> weight_grad) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long pad = static_cast<long>(s.padding);
  for (std::size_t co = 0; co < s.out_channels; ++co)
    for (std::size_t ci = 0; ci < s.in_channels; ++ci)
      for (std::size_t ky = 0; ky < s.kernel; ++ky)
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
          double acc = 0.0;
          for (std::size_t n = 0; n < s.batch; ++n)
            for (std::size_t y = 0; y < oh; ++y)
              for (std::size_t x = 0; x < ow; ++x) {
                const long iy = static_cast<long>(y * s.stride + ky) - pad;
                const long ix = static_cast<long>(x * s.stride + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.in_height) ||
                    ix >= static_cast<long>(s.in_width))
                  continue;
                acc += in[((n * s.in_channels + ci) * s.in_height + iy) * s.in_width + ix] *
                       out_grad[((n * s.out_channels + co) * oh + y) * ow + x];
              }
          weight_grad[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx] += acc;
        }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> weight,
                           std::span<const double> out_grad, std::span<double> in_grad) {
  const std::size_t oh = s.out_height(), ow = s.out_width();
  const long pad = static_cast<long>(s.padding);
  for (std::size_t n = 0; n < s.batch; ++n)
    for (std::size_t co = 0; co < s.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double g = out_grad[((n * s.out_channels + co) * oh + y) * ow + x];
          for (std::size_t ci = 0; ci < s.in_channels; ++ci)
            for (std::size_t ky = 0; ky < s.kernel; ++ky)
              for (std::size_t kx = 0; kx < s.kernel; ++kx) {
                const long iy = static_cast<long>(y * s.stride + ky) - pad;
                const long ix = static_cast<long>(x * s.stride + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.in_height) ||
                    ix >= static_cast<long>(s.in_width))
                  continue;
                in_grad[((n * s.in_channels + ci) * s.in_height + iy) * s.in_width + ix] +=
                    g * weight[((co * s.in_channels + ci) * s.kernel + ky) * s.kernel + kx];
              }
        }
}

}  // namespace chanprune::kernels::reference
