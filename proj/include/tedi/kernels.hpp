#pragma once

// Compute kernels behind the autograd ops. The unqualified versions are
// OpenMP-parallel; `kernels::reference` holds straightforward serial loops
// with identical signatures, used as test oracles and benchmark baselines.

namespace tedi::kernels {

/// Geometry of a same-padded, stride-1 square convolution over NCHW data.
struct ConvDims {
  int batch = 1;
  int in_channels = 1;
  int out_channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;  // odd; padding = kernel / 2
};

/// C(m x n) = op(A) * op(B), or C += ... when `accumulate`.
/// op(A) is m x k; A is stored k x m when `trans_a`. Same for B (k x n).
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double* c, bool accumulate);

/// y = conv(x, w) + bias. `bias` may be null.
void conv2d_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                    double* y);
/// dx += conv^T(dy, w).
void conv2d_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx);
/// dw += dL/dw, dbias += dL/dbias (`dbias` may be null).
void conv2d_backward_weight(const ConvDims& d, const double* dy, const double* x, double* dw,
                            double* dbias);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, const double* b,
          double* c, bool accumulate);
void conv2d_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                    double* y);
void conv2d_backward_input(const ConvDims& d, const double* dy, const double* w, double* dx);
void conv2d_backward_weight(const ConvDims& d, const double* dy, const double* x, double* dw,
                            double* dbias);

}  // namespace reference
}  // namespace tedi::kernels
