#include "tedi/kernels.hpp"

#include <algorithm>

namespace tedi::kernels::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double* c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[static_cast<long>(p) * m + i] : a[static_cast<long>(i) * k + p];
        const double bv = trans_b ? b[static_cast<long>(j) * k + p] : b[static_cast<long>(p) * n + j];
        s += av * bv;
      }
      double& out = c[static_cast<long>(i) * n + j];
      out = accumulate ? out + s : s;
    }
}

namespace {
long idx(int c, int y, int x, int h, int w) { return (static_cast<long>(c) * h + y) * w + x; }
}  // namespace

void conv2d_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                    double* y) {
  const int pad = d.kernel / 2;
  const long in_stride = static_cast<long>(d.in_channels) * d.height * d.width;
  const long out_stride = static_cast<long>(d.out_channels) * d.height * d.width;
  for (int s = 0; s < d.batch; ++s)
    for (int o = 0; o < d.out_channels; ++o)
      for (int yy = 0; yy < d.height; ++yy)
        for (int xx = 0; xx < d.width; ++xx) {
          double acc = bias ? bias[o] : 0.0;
          for (int c = 0; c < d.in_channels; ++c)
            for (int ky = 0; ky < d.kernel; ++ky)
              for (int kx = 0; kx < d.kernel; ++kx) {
                const int sy = yy + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= d.height || sx < 0 || sx >= d.width) continue;
                acc += w[((static_cast<long>(o) * d.in_channels + c) * d.kernel + ky) * d.kernel + kx] *
                       x[s * in_stride + idx(c, sy, sx, d.height, d.width)];
              }
          y[s * out_stride + idx(o, yy, xx, d.height, d.width)] = acc;
        }
}

void conv2d_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx) {
  const int pad = d.kernel / 2;
  const long in_stride = static_cast<long>(d.in_channels) * d.height * d.width;
  const long out_stride = static_cast<long>(d.out_channels) * d.height * d.width;
  for (int s = 0; s < d.batch; ++s)
    for (int o = 0; o < d.out_channels; ++o)
      for (int yy = 0; yy < d.height; ++yy)
        for (int xx = 0; xx < d.width; ++xx) {
          const double g = dy[s * out_stride + idx(o, yy, xx, d.height, d.width)];
          for (int c = 0; c < d.in_channels; ++c)
            for (int ky = 0; ky < d.kernel; ++ky)
              for (int kx = 0; kx < d.kernel; ++kx) {
                const int sy = yy + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= d.height || sx < 0 || sx >= d.width) continue;
                dx[s * in_stride + idx(c, sy, sx, d.height, d.width)] +=
                    g * w[((static_cast<long>(o) * d.in_channels + c) * d.kernel + ky) * d.kernel + kx];
              }
        }
}

void conv2d_backward_weight(const ConvDims& d, const double* dy, const double* x, double* dw,
                            double* dbias) {
  const int pad = d.kernel / 2;
  const long in_stride = static_cast<long>(d.in_channels) * d.height * d.width;
  const long out_stride = static_cast<long>(d.out_channels) * d.height * d.width;
  for (int s = 0; s < d.batch; ++s)
    for (int o = 0; o < d.out_channels; ++o)
      for (int yy = 0; yy < d.height; ++yy)
        for (int xx = 0; xx < d.width; ++xx) {
          const double g = dy[s * out_stride + idx(o, yy, xx, d.height, d.width)];
          if (dbias) dbias[o] += g;
          for (int c = 0; c < d.in_channels; ++c)
            for (int ky = 0; ky < d.kernel; ++ky)
              for (int kx = 0; kx < d.kernel; ++kx) {
                const int sy = yy + ky - pad, sx = xx + kx - pad;
                if (sy < 0 || sy >= d.height || sx < 0 || sx >= d.width) continue;
                dw[((static_cast<long>(o) * d.in_channels + c) * d.kernel + ky) * d.kernel + kx] +=
                    g * x[s * in_stride + idx(c, sy, sx, d.height, d.width)];
              }
        }
}

}  // namespace tedi::kernels::reference
