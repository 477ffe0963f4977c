#include <random>

#include "doctest.h"
#include "tedi/kernels.hpp"
#include "tedi/tensor.hpp"

using namespace tedi;

namespace {
std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}
}  // namespace

TEST_CASE("gemm matches the serial reference for every transpose combination") {
  const int m = 13, n = 37, k = 21;
  auto a = random_vec(static_cast<std::size_t>(m) * k, 1);
  auto b = random_vec(static_cast<std::size_t>(k) * n, 2);
  for (bool ta : {false, true})
    for (bool tb : {false, true})
      for (bool acc : {false, true}) {
        std::vector<double> c1 = random_vec(static_cast<std::size_t>(m) * n, 3), c2 = c1;
        kernels::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
        kernels::reference::gemm(ta, tb, m, n, k, a.data(), b.data(), c2.data(), acc);
        CHECK(max_abs_diff(c1, c2) < 1e-11);
      }
}

TEST_CASE("conv2d kernels match the direct-loop reference") {
  for (int kernel : {1, 3, 5}) {
    kernels::ConvDims d{3, 4, 5, 6, 7, kernel};
    const std::size_t xs = static_cast<std::size_t>(d.batch) * d.in_channels * d.height * d.width;
    const std::size_t ys = static_cast<std::size_t>(d.batch) * d.out_channels * d.height * d.width;
    const std::size_t ws = static_cast<std::size_t>(d.out_channels) * d.in_channels * kernel * kernel;
    auto x = random_vec(xs, 4), w = random_vec(ws, 5), bias = random_vec(d.out_channels, 6), dy = random_vec(ys, 7);

    std::vector<double> y1(ys), y2(ys);
    kernels::conv2d_forward(d, x.data(), w.data(), bias.data(), y1.data());
    kernels::reference::conv2d_forward(d, x.data(), w.data(), bias.data(), y2.data());
    CHECK(max_abs_diff(y1, y2) < 1e-11);

    std::vector<double> dx1(xs, 0.5), dx2(xs, 0.5);
    kernels::conv2d_backward_input(d, dy.data(), w.data(), dx1.data());
    kernels::reference::conv2d_backward_input(d, dy.data(), w.data(), dx2.data());
    CHECK(max_abs_diff(dx1, dx2) < 1e-11);

    std::vector<double> dw1(ws, 0.25), dw2(ws, 0.25), db1(d.out_channels, 0.0), db2(d.out_channels, 0.0);
    kernels::conv2d_backward_weight(d, dy.data(), x.data(), dw1.data(), db1.data());
    kernels::reference::conv2d_backward_weight(d, dy.data(), x.data(), dw2.data(), db2.data());
    CHECK(max_abs_diff(dw1, dw2) < 1e-10);
    CHECK(max_abs_diff(db1, db2) < 1e-10);
  }
}

TEST_CASE("empty gemm dimensions leave the output zeroed") {
  std::vector<double> c(6, 3.0);
  kernels::gemm(false, false, 2, 3, 0, nullptr, nullptr, c.data(), false);
  for (double v : c) CHECK(v == 0.0);
}
