#include "tedi/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace tedi::kernels {
namespace {

// C(m x n) += A(m x k) * B(k x n), all row-major and contiguous.
// Four rows of C are updated per pass over a row of B.
void gemm_nn_serial(int m, int n, int k, const double* a, const double* b, double* c) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + static_cast<long>(i) * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* bp = b + static_cast<long>(p) * n;
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
#pragma omp simd
      for (int j = 0; j < n; ++j) {
        const double bj = bp[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + static_cast<long>(i) * n;
    const double* ai = a + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double v = ai[p];
      const double* bp = b + static_cast<long>(p) * n;
#pragma omp simd
      for (int j = 0; j < n; ++j) ci[j] += v * bp[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T via row dot products.
void gemm_nt_serial(int m, int n, int k, const double* a, const double* b, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<long>(i) * k;
    double* ci = c + static_cast<long>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<long>(j) * k;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

void transpose(int rows, int cols, const double* src, double* dst) {
  for (int r = 0; r < rows; ++r)
    for (int q = 0; q < cols; ++q) dst[static_cast<long>(q) * rows + r] = src[static_cast<long>(r) * cols + q];
}

// col has shape (C*K*K, H*W).
void im2col(const double* x, int channels, int h, int w, int kernel, double* col) {
  const int pad = kernel / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = col + static_cast<long>((c * kernel + ky) * kernel + kx) * hw;
        const double* xc = x + static_cast<long>(c) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          double* out = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, 0.0);
            continue;
          }
          const double* in = xc + sy * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            out[xx] = (sx >= 0 && sx < w) ? in[sx] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, int channels, int h, int w, int kernel, double* x) {
  const int pad = kernel / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = col + static_cast<long>((c * kernel + ky) * kernel + kx) * hw;
        double* xc = x + static_cast<long>(c) * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* in = row + y * w;
          double* out = xc + sy * w;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < w) out[sx] += in[xx];
          }
        }
      }
}

constexpr long kParallelWork = 1 << 15;

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<long>(m) * n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;

  std::vector<double> a_packed;
  if (trans_a) {
    a_packed.resize(static_cast<std::size_t>(m) * k);
    transpose(k, m, a, a_packed.data());
    a = a_packed.data();
  }
  const long work = static_cast<long>(m) * n * k;
  if (trans_b) {
    const int rows_per_task = 4;
    const int tasks = (m + rows_per_task - 1) / rows_per_task;
#pragma omp parallel for schedule(static) if (work > kParallelWork && tasks > 1)
    for (int t = 0; t < tasks; ++t) {
      const int i0 = t * rows_per_task;
      const int rows = std::min(rows_per_task, m - i0);
      gemm_nt_serial(rows, n, k, a + static_cast<long>(i0) * k, b, c + static_cast<long>(i0) * n);
    }
    return;
  }
  const int rows_per_task = 4;
  const int tasks = (m + rows_per_task - 1) / rows_per_task;
#pragma omp parallel for schedule(static) if (work > kParallelWork && tasks > 1)
  for (int t = 0; t < tasks; ++t) {
    const int i0 = t * rows_per_task;
    const int rows = std::min(rows_per_task, m - i0);
    gemm_nn_serial(rows, n, k, a + static_cast<long>(i0) * k, b, c + static_cast<long>(i0) * n);
  }
}

void conv2d_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                    double* y) {
  const int hw = d.height * d.width;
  const int patch = d.in_channels * d.kernel * d.kernel;
  const long in_stride = static_cast<long>(d.in_channels) * hw;
  const long out_stride = static_cast<long>(d.out_channels) * hw;
#pragma omp parallel if (d.batch > 1)
  {
    std::vector<double> col(static_cast<std::size_t>(patch) * hw);
#pragma omp for schedule(static)
    for (int s = 0; s < d.batch; ++s) {
      double* ys = y + s * out_stride;
      for (int o = 0; o < d.out_channels; ++o)
        std::fill(ys + static_cast<long>(o) * hw, ys + static_cast<long>(o + 1) * hw, bias ? bias[o] : 0.0);
      if (d.kernel == 1) {
        gemm_nn_serial(d.out_channels, hw, patch, w, x + s * in_stride, ys);
      } else {
        im2col(x + s * in_stride, d.in_channels, d.height, d.width, d.kernel, col.data());
        gemm_nn_serial(d.out_channels, hw, patch, w, col.data(), ys);
      }
    }
  }
}

void conv2d_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx) {
  const int hw = d.height * d.width;
  const int patch = d.in_channels * d.kernel * d.kernel;
  const long in_stride = static_cast<long>(d.in_channels) * hw;
  const long out_stride = static_cast<long>(d.out_channels) * hw;
  std::vector<double> wt(static_cast<std::size_t>(patch) * d.out_channels);
  transpose(d.out_channels, patch, w, wt.data());
#pragma omp parallel if (d.batch > 1)
  {
    std::vector<double> col(static_cast<std::size_t>(patch) * hw);
#pragma omp for schedule(static)
    for (int s = 0; s < d.batch; ++s) {
      if (d.kernel == 1) {
        gemm_nn_serial(patch, hw, d.out_channels, wt.data(), dy + s * out_stride, dx + s * in_stride);
      } else {
        std::fill(col.begin(), col.end(), 0.0);
        gemm_nn_serial(patch, hw, d.out_channels, wt.data(), dy + s * out_stride, col.data());
        col2im_add(col.data(), d.in_channels, d.height, d.width, d.kernel, dx + s * in_stride);
      }
    }
  }
}

void conv2d_backward_weight(const ConvDims& d, const double* dy, const double* x, double* dw,
                            double* dbias) {
  const int hw = d.height * d.width;
  const int patch = d.in_channels * d.kernel * d.kernel;
  const long in_stride = static_cast<long>(d.in_channels) * hw;
  const long out_stride = static_cast<long>(d.out_channels) * hw;
  const std::size_t wsize = static_cast<std::size_t>(d.out_channels) * patch;
  // Per-sample partials are reduced in sample order so the result does not
  // depend on the thread count.
  std::vector<double> partial(wsize * static_cast<std::size_t>(d.batch), 0.0);
#pragma omp parallel if (d.batch > 1)
  {
    std::vector<double> col(static_cast<std::size_t>(patch) * hw);
#pragma omp for schedule(static)
    for (int s = 0; s < d.batch; ++s) {
      const double* src = x + s * in_stride;
      if (d.kernel != 1) {
        im2col(src, d.in_channels, d.height, d.width, d.kernel, col.data());
        src = col.data();
      }
      gemm_nt_serial(d.out_channels, patch, hw, dy + s * out_stride, src, partial.data() + wsize * s);
    }
  }
  for (int s = 0; s < d.batch; ++s) {
    const double* p = partial.data() + wsize * s;
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += p[i];
  }
  if (dbias) {
    for (int s = 0; s < d.batch; ++s)
      for (int o = 0; o < d.out_channels; ++o) {
        const double* g = dy + s * out_stride + static_cast<long>(o) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += g[i];
        dbias[o] += acc;
      }
  }
}

}  // namespace tedi::kernels
