#pragma once

// Dense inner loops used by the autodiff operations.
//
// Every kernel exists twice: `serial::` is the plain reference
// implementation kept for tests and benchmarks, `parallel::` is the
// OpenMP version used in production. Parallel kernels only split work
// over output elements, so results do not depend on the thread count.

#include <cstddef>

namespace windinr::kernels {

enum class Padding { zero, periodic };

/// Sample location on a feature map, in pixel units with aligned corners.
struct PixelCoord {
  double x;
  double y;
};

namespace serial {

// C (+)= A B, A is m x k, B is k x n.
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate);
// C (+)= A B^T, A is m x k, B is n x k.
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate);
// C (+)= A^T B, A is k x m, B is k x n.
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate);

// Channels-last 3x3 patch extraction: in is (h*w) x ch, cols is (h*w) x (9*ch).
void im2col3x3(std::size_t h, std::size_t w, std::size_t ch, const double* in, double* cols, Padding pad);
// Adjoint of im2col3x3, accumulating into grad_in.
void col2im3x3(std::size_t h, std::size_t w, std::size_t ch, const double* cols, double* grad_in, Padding pad);

// Bilinear sampling with border clamping: out is n x ch.
void bilinear_gather(std::size_t h, std::size_t w, std::size_t ch, const double* map, std::size_t n,
                     const PixelCoord* at, double* out);
// Adjoint of bilinear_gather, accumulating into grad_map.
void bilinear_scatter(std::size_t h, std::size_t w, std::size_t ch, const double* grad_out, std::size_t n,
                      const PixelCoord* at, double* grad_map);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c,
             bool accumulate);
void im2col3x3(std::size_t h, std::size_t w, std::size_t ch, const double* in, double* cols, Padding pad);
void col2im3x3(std::size_t h, std::size_t w, std::size_t ch, const double* cols, double* grad_in, Padding pad);
void bilinear_gather(std::size_t h, std::size_t w, std::size_t ch, const double* map, std::size_t n,
                     const PixelCoord* at, double* out);
void bilinear_scatter(std::size_t h, std::size_t w, std::size_t ch, const double* grad_out, std::size_t n,
                      const PixelCoord* at, double* grad_map);

}  // namespace parallel

/// Caps the OpenMP worker pool; 1 gives single-threaded timing mode.
void set_thread_count(int threads);
int thread_count();

}  // namespace windinr::kernels
