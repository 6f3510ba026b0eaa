#include "windinr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace windinr::kernels {

namespace {

using Index = std::ptrdiff_t;

// Neighbour index along one axis, or -1 when it falls in the zero padding.
inline Index neighbour(Index i, Index offset, Index extent, Padding pad) {
  Index j = i + offset;
  if (j >= 0 && j < extent) return j;
  if (pad == Padding::zero) return -1;
  return (j % extent + extent) % extent;
}

struct BilinearTap {
  std::size_t i00, i01, i10, i11;
  double w00, w01, w10, w11;
};

inline BilinearTap bilinear_tap(std::size_t h, std::size_t w, PixelCoord p) {
  const double x = std::clamp(p.x, 0.0, static_cast<double>(w - 1));
  const double y = std::clamp(p.y, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  return {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1,
          (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
}

// Rows [r0, r1) of C (+)= A B with four-row register blocking.
void gemm_nn_rows(std::size_t r0, std::size_t r1, std::size_t k, std::size_t n, const double* a,
                  const double* b, double* c) {
  constexpr std::size_t kColBlock = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t jn = std::min(n, j0 + kColBlock) - j0;
    std::size_t i = r0;
    for (; i + 4 <= r1; i += 4) {
      double* c0 = c + i * n + j0;
      double* c1 = c0 + n;
      double* c2 = c1 + n;
      double* c3 = c2 + n;
      const double* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j0;
        const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
        for (std::size_t j = 0; j < jn; ++j) {
          const double bj = bp[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < r1; ++i) {
      double* ci = c + i * n + j0;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j0;
        const double v = ai[p];
        for (std::size_t j = 0; j < jn; ++j) ci[j] += v * bp[j];
      }
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
}

}  // namespace

// ---------------------------------------------------------------------------
// serial reference

namespace serial {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void im2col3x3(std::size_t h, std::size_t w, std::size_t ch, const double* in, double* cols, Padding pad) {
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* row = cols + (y * w + x) * 9 * ch;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index yy = neighbour(static_cast<Index>(y), ky - 1, static_cast<Index>(h), pad);
        for (Index kx = 0; kx < 3; ++kx) {
          const Index xx = neighbour(static_cast<Index>(x), kx - 1, static_cast<Index>(w), pad);
          double* dst = row + (ky * 3 + kx) * ch;
          if (yy < 0 || xx < 0) {
            std::fill(dst, dst + ch, 0.0);
          } else {
            std::memcpy(dst, in + (yy * static_cast<Index>(w) + xx) * ch, ch * sizeof(double));
          }
        }
      }
    }
  }
}

void col2im3x3(std::size_t h, std::size_t w, std::size_t ch, const double* cols, double* grad_in, Padding pad) {
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double* row = cols + (y * w + x) * 9 * ch;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index yy = neighbour(static_cast<Index>(y), ky - 1, static_cast<Index>(h), pad);
        for (Index kx = 0; kx < 3; ++kx) {
          const Index xx = neighbour(static_cast<Index>(x), kx - 1, static_cast<Index>(w), pad);
          if (yy < 0 || xx < 0) continue;
          const double* src = row + (ky * 3 + kx) * ch;
          double* dst = grad_in + (yy * static_cast<Index>(w) + xx) * ch;
          for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

void bilinear_gather(std::size_t h, std::size_t w, std::size_t ch, const double* map, std::size_t n,
                     const PixelCoord* at, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const BilinearTap t = bilinear_tap(h, w, at[i]);
    for (std::size_t c = 0; c < ch; ++c) {
      out[i * ch + c] = t.w00 * map[t.i00 * ch + c] + t.w01 * map[t.i01 * ch + c] +
                        t.w10 * map[t.i10 * ch + c] + t.w11 * map[t.i11 * ch + c];
    }
  }
}

void bilinear_scatter(std::size_t h, std::size_t w, std::size_t ch, const double* grad_out, std::size_t n,
                      const PixelCoord* at, double* grad_map) {
  for (std::size_t i = 0; i < n; ++i) {
    const BilinearTap t = bilinear_tap(h, w, at[i]);
    for (std::size_t c = 0; c < ch; ++c) {
      const double g = grad_out[i * ch + c];
      grad_map[t.i00 * ch + c] += t.w00 * g;
      grad_map[t.i01 * ch + c] += t.w01 * g;
      grad_map[t.i10 * ch + c] += t.w10 * g;
      grad_map[t.i11 * ch + c] += t.w11 * g;
    }
  }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP

namespace parallel {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  constexpr std::size_t kRowBlock = 16;
  const auto blocks = static_cast<Index>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
    gemm_nn_rows(r0, std::min(m, r0 + kRowBlock), k, n, a, b, c);
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, k, n, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate) {
  std::vector<double> at(m * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, k, n, at.data(), b, c, accumulate);
}

void im2col3x3(std::size_t h, std::size_t w, std::size_t ch, const double* in, double* cols, Padding pad) {
#pragma omp parallel for schedule(static)
  for (Index y = 0; y < static_cast<Index>(h); ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* row = cols + (static_cast<std::size_t>(y) * w + x) * 9 * ch;
      for (Index ky = 0; ky < 3; ++ky) {
        const Index yy = neighbour(y, ky - 1, static_cast<Index>(h), pad);
        for (Index kx = 0; kx < 3; ++kx) {
          const Index xx = neighbour(static_cast<Index>(x), kx - 1, static_cast<Index>(w), pad);
          double* dst = row + (ky * 3 + kx) * ch;
          if (yy < 0 || xx < 0) {
            std::fill(dst, dst + ch, 0.0);
          } else {
            std::memcpy(dst, in + (yy * static_cast<Index>(w) + xx) * ch, ch * sizeof(double));
          }
        }
      }
    }
  }
}

void col2im3x3(std::size_t h, std::size_t w, std::size_t ch, const double* cols, double* grad_in, Padding pad) {
  // Gather form: each input pixel sums the patch slots that read it, in a fixed order.
#pragma omp parallel for schedule(static)
  for (Index y = 0; y < static_cast<Index>(h); ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* dst = grad_in + (static_cast<std::size_t>(y) * w + x) * ch;
      for (Index ky = 0; ky < 3; ++ky) {
        // output row yo reads input row y at tap ky when yo + ky - 1 == y
        const Index yo = neighbour(y, 1 - ky, static_cast<Index>(h), pad);
        if (yo < 0) continue;
        for (Index kx = 0; kx < 3; ++kx) {
          const Index xo = neighbour(static_cast<Index>(x), 1 - kx, static_cast<Index>(w), pad);
          if (xo < 0) continue;
          const double* src = cols + ((yo * static_cast<Index>(w) + xo) * 9 + ky * 3 + kx) * ch;
          for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

void bilinear_gather(std::size_t h, std::size_t w, std::size_t ch, const double* map, std::size_t n,
                     const PixelCoord* at, double* out) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const BilinearTap t = bilinear_tap(h, w, at[i]);
    double* o = out + i * ch;
    for (std::size_t c = 0; c < ch; ++c) {
      o[c] = t.w00 * map[t.i00 * ch + c] + t.w01 * map[t.i01 * ch + c] + t.w10 * map[t.i10 * ch + c] +
             t.w11 * map[t.i11 * ch + c];
    }
  }
}

void bilinear_scatter(std::size_t h, std::size_t w, std::size_t ch, const double* grad_out, std::size_t n,
                      const PixelCoord* at, double* grad_map) {
  std::vector<BilinearTap> taps(n);
  for (std::size_t i = 0; i < n; ++i) taps[i] = bilinear_tap(h, w, at[i]);
  // Channels are independent, so splitting over them keeps the per-pixel summation order serial.
#pragma omp parallel for schedule(static)
  for (Index c = 0; c < static_cast<Index>(ch); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const BilinearTap& t = taps[i];
      const double g = grad_out[i * ch + c];
      grad_map[t.i00 * ch + c] += t.w00 * g;
      grad_map[t.i01 * ch + c] += t.w01 * g;
      grad_map[t.i10 * ch + c] += t.w10 * g;
      grad_map[t.i11 * ch + c] += t.w11 * g;
    }
  }
}

}  // namespace parallel

void set_thread_count(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace windinr::kernels
