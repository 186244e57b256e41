#include <algorithm>
#include <utility>
#include <immintrin.h>
#include <vector>

#include "chanprune/kernels.hpp"

namespace chanprune::kernels::parallel {
namespace {

constexpr std::size_t kRowBlock = 4;

bool is_pointwise(const ConvShape& s) { return s.kernel == 1 && s.stride == 1 && s.padding == 0; }

// Output columns [x0, x1) whose tap kx lands inside the image.
std::pair<std::size_t, std::size_t> valid_x(const ConvShape& s, std::size_t kx, std::size_t ow) {
  std::size_t x0 = 0;
  while (x0 < ow && x0 * s.stride + kx < s.padding) ++x0;
  std::size_t x1 = ow;
  while (x1 > x0 && (x1 - 1) * s.stride + kx >= s.padding + s.in_width) --x1;
  return {x0, x1};
}

// col[k][j] with k = (ci, ky, kx) and j = (y, x); zero where the window hits padding.
void im2col(const ConvShape& s, const double* image, double* col) {
  const std::size_t oh = s.out_height(), ow = s.out_width(), kk = s.kernel * s.kernel;
  const long pad = static_cast<long>(s.padding);
  const long rows = static_cast<long>(s.in_channels * kk);
#pragma omp parallel for schedule(static)
  for (long k = 0; k < rows; ++k) {
    const std::size_t ci = k / kk, ky = (k % kk) / s.kernel, kx = k % s.kernel;
    const double* plane = image + ci * s.in_height * s.in_width;
    double* dst = col + k * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const long iy = static_cast<long>(y * s.stride + ky) - pad;
      double* row = dst + y * ow;
      if (iy < 0 || iy >= static_cast<long>(s.in_height)) {
        std::fill(row, row + ow, 0.0);
        continue;
      }
      const auto [x0, x1] = valid_x(s, kx, ow);
      std::fill(row, row + x0, 0.0);
      std::fill(row + x1, row + ow, 0.0);
      const double* src = plane + iy * s.in_width + (x0 * s.stride + kx - s.padding);
      if (s.stride == 1)
        std::copy(src, src + (x1 - x0), row + x0);
      else
        for (std::size_t x = x0; x < x1; ++x) row[x] = src[(x - x0) * s.stride];
    }
  }
}

// Adds col rows back onto the image; parallel over input channels, which own
// disjoint column rows, so the scatter is race-free.
void col2im_add(const ConvShape& s, const double* col, double* image) {
  const std::size_t oh = s.out_height(), ow = s.out_width(), kk = s.kernel * s.kernel;
  const long pad = static_cast<long>(s.padding);
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < static_cast<long>(s.in_channels); ++ci) {
    double* plane = image + ci * s.in_height * s.in_width;
    for (std::size_t r = 0; r < kk; ++r) {
      const std::size_t ky = r / s.kernel, kx = r % s.kernel;
      const double* src = col + (ci * kk + r) * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        const long iy = static_cast<long>(y * s.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(s.in_height)) continue;
        const auto [x0, x1] = valid_x(s, kx, ow);
        double* dst = plane + iy * s.in_width + (x0 * s.stride + kx - s.padding);
        for (std::size_t x = x0; x < x1; ++x) dst[(x - x0) * s.stride] += src[y * ow + x];
      }
    }
  }
}


// Portable path: c rows updated k by k (also handles column tails).
void rows_generic(std::size_t rn, std::size_t depth, std::size_t n, std::size_t j0, std::size_t j1, const double* a,
                  std::size_t lda, std::size_t a_col_stride, const double* b, double* c) {
  for (std::size_t r = 0; r < rn; ++r) {
    double* crow = c + r * n;
    for (std::size_t k = 0; k < depth; ++k) {
      const double w = a[r * lda + k * a_col_stride];
      const double* brow = b + k * n;
      for (std::size_t j = j0; j < j1; ++j) crow[j] += w * brow[j];
    }
  }
}

#if defined(__AVX512F__)
#define CHANPRUNE_SIMD 1
using vec = __m512d;
constexpr std::size_t kLanes = 8;
inline vec vload(const double* p) { return _mm512_loadu_pd(p); }
inline void vstore(double* p, vec v) { _mm512_storeu_pd(p, v); }
inline vec vset1(double x) { return _mm512_set1_pd(x); }
inline vec vzero() { return _mm512_setzero_pd(); }
inline vec vfma(vec a, vec b, vec c) { return _mm512_fmadd_pd(a, b, c); }
inline double vsum(vec v) { return _mm512_reduce_add_pd(v); }
#elif defined(__AVX2__) && defined(__FMA__)
#define CHANPRUNE_SIMD 1
using vec = __m256d;
constexpr std::size_t kLanes = 4;
inline vec vload(const double* p) { return _mm256_loadu_pd(p); }
inline void vstore(double* p, vec v) { _mm256_storeu_pd(p, v); }
inline vec vset1(double x) { return _mm256_set1_pd(x); }
inline vec vzero() { return _mm256_setzero_pd(); }
inline vec vfma(vec a, vec b, vec c) { return _mm256_fmadd_pd(a, b, c); }
inline double vsum(vec v) {
  const __m128d lo = _mm256_castpd256_pd128(v), hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}
#endif

#ifdef CHANPRUNE_SIMD
constexpr std::size_t kColBlock = 4 * kLanes;

// 4 rows x kColBlock columns of c kept in 16 registers across the whole depth.
void tile_4(std::size_t depth, std::size_t n, const double* a, std::size_t lda, std::size_t a_col_stride,
            const double* b, double* c) {
  vec acc[4][4];
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < 4; ++q) acc[r][q] = vload(c + r * n + kLanes * q);
  for (std::size_t k = 0; k < depth; ++k) {
    const double* brow = b + k * n;
    const vec b0 = vload(brow), b1 = vload(brow + kLanes), b2 = vload(brow + 2 * kLanes),
              b3 = vload(brow + 3 * kLanes);
    for (int r = 0; r < 4; ++r) {
      const vec w = vset1(a[r * lda + k * a_col_stride]);
      acc[r][0] = vfma(w, b0, acc[r][0]);
      acc[r][1] = vfma(w, b1, acc[r][1]);
      acc[r][2] = vfma(w, b2, acc[r][2]);
      acc[r][3] = vfma(w, b3, acc[r][3]);
    }
  }
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < 4; ++q) vstore(c + r * n + kLanes * q, acc[r][q]);
}

// out[r][q] += dot(x[r], y[q]) for a 4 x 4 block of length-n rows.
void dot_tile(std::size_t n, const double* x, std::size_t x_stride, const double* y, std::size_t y_stride,
              double* out, std::size_t out_stride) {
  vec acc[4][4];
  for (auto& row : acc)
    for (auto& v : row) v = vzero();
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    const vec y0 = vload(y + j), y1 = vload(y + y_stride + j), y2 = vload(y + 2 * y_stride + j),
              y3 = vload(y + 3 * y_stride + j);
    for (int r = 0; r < 4; ++r) {
      const vec xv = vload(x + r * x_stride + j);
      acc[r][0] = vfma(xv, y0, acc[r][0]);
      acc[r][1] = vfma(xv, y1, acc[r][1]);
      acc[r][2] = vfma(xv, y2, acc[r][2]);
      acc[r][3] = vfma(xv, y3, acc[r][3]);
    }
  }
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < 4; ++q) {
      double t = vsum(acc[r][q]);
      for (std::size_t jj = j; jj < n; ++jj) t += x[r * x_stride + jj] * y[q * y_stride + jj];
      out[r * out_stride + q] += t;
    }
}
#else
constexpr std::size_t kColBlock = 0;
void tile_4(std::size_t, std::size_t, const double*, std::size_t, std::size_t, const double*, double*) {}
void dot_tile(std::size_t n, const double* x, std::size_t x_stride, const double* y, std::size_t y_stride,
              double* out, std::size_t out_stride) {
  for (int r = 0; r < 4; ++r)
    for (int q = 0; q < 4; ++q) {
      double t = 0.0;
      for (std::size_t j = 0; j < n; ++j) t += x[r * x_stride + j] * y[q * y_stride + j];
      out[r * out_stride + q] += t;
    }
}
#endif

double dot(const double* a, const double* b, std::size_t n) {
  double t = 0.0;
  for (std::size_t j = 0; j < n; ++j) t += a[j] * b[j];
  return t;
}

// c[rows x n] += a[rows x depth] * b[depth x n]; a is row-major with stride lda.
void gemm_accumulate(std::size_t rows, std::size_t depth, std::size_t n, const double* a, std::size_t lda,
                     std::size_t a_col_stride, const double* b, double* c) {
  const long blocks = static_cast<long>((rows + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
    const std::size_t rn = std::min(kRowBlock, rows - r0);
    const double* ab = a + r0 * lda;
    double* cb = c + r0 * n;
    std::size_t j = 0;
    if (kColBlock > 0 && rn == kRowBlock)
      for (; j + kColBlock <= n; j += kColBlock) tile_4(depth, n, ab, lda, a_col_stride, b + j, cb + j);
    if (j < n) rows_generic(rn, depth, n, j, n, ab, lda, a_col_stride, b, cb);
  }
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const std::size_t hw = s.out_height() * s.out_width();
  const std::size_t depth = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_image = s.in_channels * s.in_height * s.in_width;
  std::vector<double> col(is_pointwise(s) ? 0 : depth * hw);
  for (std::size_t n = 0; n < s.batch; ++n) {
    const double* image = in.data() + n * in_image;
    if (!is_pointwise(s)) im2col(s, image, col.data());
    const double* b = is_pointwise(s) ? image : col.data();
    double* o = out.data() + n * s.out_channels * hw;
    for (std::size_t co = 0; co < s.out_channels; ++co)
      std::fill(o + co * hw, o + (co + 1) * hw, bias.empty() ? 0.0 : bias[co]);
    gemm_accumulate(s.out_channels, depth, hw, weight.data(), depth, 1, b, o);
  }
}

void conv2d_backward_weight(const ConvShape& s, std::span<const double> in,
                            std::span<const double> out_grad, std::span<double> weight_grad) {
  const std::size_t hw = s.out_height() * s.out_width();
  const std::size_t depth = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_image = s.in_channels * s.in_height * s.in_width;
  const std::size_t co_blocks = s.out_channels / 4, k_blocks = depth / 4;
  std::vector<double> col(is_pointwise(s) ? 0 : depth * hw);
  for (std::size_t n = 0; n < s.batch; ++n) {
    const double* image = in.data() + n * in_image;
    if (!is_pointwise(s)) im2col(s, image, col.data());
    const double* b = is_pointwise(s) ? image : col.data();
    const double* dy = out_grad.data() + n * s.out_channels * hw;
    double* dw = weight_grad.data();
    // dW[co][k] += sum_j dy[co][j] col[k][j], in 4 x 4 blocks plus scalar edges.
#pragma omp parallel for schedule(static)
    for (long cb = 0; cb < static_cast<long>(co_blocks); ++cb)
      for (std::size_t kb = 0; kb < k_blocks; ++kb)
        dot_tile(hw, dy + cb * 4 * hw, hw, b + kb * 4 * hw, hw, dw + cb * 4 * depth + kb * 4, depth);
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const std::size_t k0 = co < co_blocks * 4 ? k_blocks * 4 : 0;
      for (std::size_t k = k0; k < depth; ++k) dw[co * depth + k] += dot(dy + co * hw, b + k * hw, hw);
    }
  }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> weight,
                           std::span<const double> out_grad, std::span<double> in_grad) {
  const std::size_t hw = s.out_height() * s.out_width();
  const std::size_t depth = s.in_channels * s.kernel * s.kernel;
  const std::size_t in_image = s.in_channels * s.in_height * s.in_width;
  std::vector<double> dcol(depth * hw);
  for (std::size_t n = 0; n < s.batch; ++n) {
    const double* dy = out_grad.data() + n * s.out_channels * hw;
    double* dx = in_grad.data() + n * in_image;
    std::fill(dcol.begin(), dcol.end(), 0.0);
    // dcol[k][j] = sum_co W[co][k] dy[co][j], i.e. W^T read with row stride 1
    // and column stride `depth`.
    gemm_accumulate(depth, s.out_channels, hw, weight.data(), 1, depth, dy, dcol.data());
    if (is_pointwise(s)) {
      for (std::size_t i = 0; i < in_image; ++i) dx[i] += dcol[i];
    } else {
      col2im_add(s, dcol.data(), dx);
    }
  }
}

}  // namespace chanprune::kernels::parallel
