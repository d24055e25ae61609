#pragma once

#include <cstddef>

// Raw dense kernels over contiguous row-major buffers. All of them accumulate
// into the output (C += ...), callers zero it when they need assignment.
namespace pemb::kernels {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T av = a[k];
      if (av == T(0)) continue;
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* a = A + i * K;
    T* c = C + i * N;
    for (std::size_t j = 0; j < N; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* a = A + k * M;
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T av = a[i];
      if (av == T(0)) continue;
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;  // the "image" side
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;             // the "column" side

  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// cols[C*k*k, oh*ow] = patches of img[C,H,W]; out-of-bounds taps read 0.
template <class T>
void im2col(const ConvGeometry& g, const T* img, T* cols) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.height) &&
                                ix < static_cast<long>(g.width);
            row[oy * g.out_w + ox] =
                inside ? img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                             static_cast<std::size_t>(ix)]
                       : T(0);
          }
        }
      }
}

// Adjoint of im2col: img[C,H,W] += scatter(cols).
template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* img) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
            img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace pemb::kernels
