#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// autograd engine: it only re-evaluates a scalar function after nudging one
// scalar at a time.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tedi/tensor.hpp"

namespace tedi::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
};

inline double relative_error(double analytic, double numeric, double abs_floor = 1e-9) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return std::abs(analytic - numeric) / std::max(scale, abs_floor / 1e-4);
}

/// Compares `analytic` with central differences of `f` w.r.t. `values` at up
/// to `max_coords` randomly chosen coordinates.
inline GradCheckResult finite_difference_check(const std::function<double()>& f, Tensor& values,
                                               const Tensor& analytic, int max_coords, unsigned seed,
                                               double h = 1e-6) {
  std::vector<std::size_t> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (static_cast<int>(idx.size()) > max_coords) idx.resize(static_cast<std::size_t>(max_coords));
  GradCheckResult r;
  for (std::size_t i : idx) {
    const double saved = values[i];
    values[i] = saved + h;
    const double fp = f();
    values[i] = saved - h;
    const double fm = f();
    values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.empty() ? 0.0 : analytic[i];
    r.max_rel_error = std::max(r.max_rel_error, relative_error(a, numeric));
    ++r.checked;
  }
  return r;
}

}  // namespace tedi::testing
