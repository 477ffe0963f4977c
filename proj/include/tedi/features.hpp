#pragma once

#include <cstdint>
#include <vector>

#include "tedi/autograd.hpp"
#include "tedi/nn.hpp"

namespace tedi {

/// Fixed conv feature network F. Weights are orthogonal at construction and
/// never trainable.
class FeatureExtractor {
public:
  /// Four conv + leaky ReLU stages, halving resolution between stages.
  explicit FeatureExtractor(int in_channels = 3, std::uint64_t seed = 0x5eed, std::vector<int> widths = {16, 32, 32, 64});
  /// F(x) = x: a single stage returning its input.
  static FeatureExtractor identity();

  bool is_identity() const { return widths_.empty(); }
  int num_stages() const { return is_identity() ? 1 : static_cast<int>(widths_.size()); }
  const nn::ParamSet& params() const { return params_; }

  /// Per-stage maps, each (N, C_s, H_s, W_s).
  std::vector<ag::Var> stages(const ag::Var& x) const;
  /// Per-sample sum over stages of squared feature differences, (N).
  ag::Var distance(const ag::Var& a, const ag::Var& b) const;
  /// Spatially pooled features of every stage, concatenated: (N, sum C_s).
  Tensor pooled(const Tensor& x) const;

private:
  FeatureExtractor(std::vector<int> widths, nn::ParamSet params);
  std::vector<int> widths_;
  nn::ParamSet params_;
};

}  // namespace tedi
