#include "tedi/features.hpp"

#include <cmath>

namespace tedi {

namespace {
constexpr double kSlope = 0.2;
}

FeatureExtractor::FeatureExtractor(int in_channels, std::uint64_t seed, std::vector<int> widths)
    : widths_(std::move(widths)) {
  nn::Rng rng(seed);
  params_.set_trainable(false);
  const double gain = std::sqrt(2.0 / (1.0 + kSlope * kSlope));
  int in = in_channels;
  for (std::size_t k = 0; k < widths_.size(); ++k) {
    const std::string name = "stage" + std::to_string(k);
    params_.add(name + ".weight", nn::orthogonal({widths_[k], in, 3, 3}, rng, gain));
    params_.add(name + ".bias", Tensor({widths_[k]}, 0.0));
    in = widths_[k];
  }
}

FeatureExtractor::FeatureExtractor(std::vector<int> widths, nn::ParamSet params)
    : widths_(std::move(widths)), params_(std::move(params)) {}

FeatureExtractor FeatureExtractor::identity() { return FeatureExtractor(std::vector<int>{}, nn::ParamSet{}); }

std::vector<ag::Var> FeatureExtractor::stages(const ag::Var& x) const {
  if (is_identity()) return {x};
  std::vector<ag::Var> out;
  ag::Var h = x;
  for (std::size_t k = 0; k < widths_.size(); ++k) {
    if (k > 0) h = ag::avgpool2x(h);
    h = ag::leaky_relu(nn::conv(params_, "stage" + std::to_string(k), h), kSlope);
    out.push_back(h);
  }
  return out;
}

ag::Var FeatureExtractor::distance(const ag::Var& a, const ag::Var& b) const {
  const auto fa = stages(a), fb = stages(b);
  ag::Var total;
  for (std::size_t s = 0; s < fa.size(); ++s) {
    ag::Var d = ag::sum_squares_per_sample(ag::sub(fa[s], fb[s]));
    total = s == 0 ? d : ag::add(total, d);
  }
  return total;
}

Tensor FeatureExtractor::pooled(const Tensor& x) const {
  ag::NoGradGuard ng;
  const auto fs = stages(ag::constant(x));
  const int n = x.dim(0);
  int width = 0;
  for (const auto& f : fs) width += f.dim(1);
  Tensor out({n, width});
  int offset = 0;
  for (const auto& f : fs) {
    const Tensor g = ag::global_avg_pool(f).value();
    const int c = f.dim(1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * width + offset + j] = g[static_cast<std::size_t>(i) * c + j];
    offset += c;
  }
  return out;
}

}  // namespace tedi
