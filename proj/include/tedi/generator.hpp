#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tedi/autograd.hpp"
#include "tedi/checkpoint.hpp"
#include "tedi/image.hpp"
#include "tedi/nn.hpp"

namespace tedi {

/// Style layers of a generator with output resolution R: 2*log2(R) - 2.
/// R must be a power of two >= 16.
int num_layers(int resolution);
/// Inverse of num_layers: R = 2^((L + 2) / 2).
int resolution_for_layers(int layers);

/// A point in the input latent space Z.
class LatentZ {
public:
  LatentZ() = default;
  explicit LatentZ(std::vector<double> values);
  static LatentZ from_batch(const Tensor& batch, int index);

  int dim() const noexcept { return static_cast<int>(values_.size()); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  /// (1, C) tensor.
  Tensor as_batch() const;
  friend bool operator==(const LatentZ&, const LatentZ&) = default;

private:
  std::vector<double> values_;
};

/// Layered style code in W: L rows of C values.
class StyleW {
public:
  StyleW() = default;
  StyleW(int num_layers, int dim, double fill = 0.0);
  /// From a (1, L, C) or (L, C) tensor, or row `index` of an (N, L, C) batch.
  static StyleW from_tensor(const Tensor& t, int index = 0);

  int num_layers() const noexcept { return layers_; }
  int dim() const noexcept { return dim_; }
  std::span<const double> row(int layer) const;
  std::span<double> row(int layer);
  std::span<const double> values() const noexcept { return values_; }
  /// (1, L, C) tensor.
  Tensor as_batch() const;
  bool all_finite() const;
  friend bool operator==(const StyleW&, const StyleW&) = default;

private:
  int layers_ = 0, dim_ = 0;
  std::vector<double> values_;
};

/// Per-layer noise maps; element i has shape (N, 1, r_i, r_i).
using NoiseInputs = std::vector<Tensor>;

struct DiscriminatorConfig {
  int resolution = 16;
  int in_channels = 3;
  int channels = 32;
};

/// Conv stack scoring images; also evaluates its directional input
/// derivative so gradient penalties need no second-order backprop.
class Discriminator {
public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

  const DiscriminatorConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// (N, C, R, R) -> (N).
  ag::Var score(const ag::Var& x) const;
  /// Returns (score, <grad_x score, tangent>) per sample, both (N).
  std::pair<ag::Var, ag::Var> score_with_tangent(const ag::Var& x, const Tensor& tangent) const;

private:
  DiscriminatorConfig cfg_;
  nn::ParamSet params_;
};

/// Gradient penalty (weight/2) * mean_n ||grad_x D(x_n)||^2 on a batch.
struct GradientPenalty {
  double value = 0.0;
  /// Scalar whose parameter gradient equals that of `value`.
  ag::Var surrogate;
  /// D(x) per sample, (N); shares the graph with `surrogate`.
  ag::Var scores;
  /// grad_x D(x) per sample, same shape as x.
  Tensor input_gradient;
};
GradientPenalty gradient_penalty(const Discriminator& d, const Tensor& x, double weight);

struct GeneratorConfig {
  int resolution = 16;
  int style_dim = 64;
  int channels = 32;
  int mapping_layers = 3;
  int disc_channels = 32;
};

class GeneratorModel {
public:
  GeneratorModel() = default;
  GeneratorModel(const GeneratorConfig& cfg, std::uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  int num_layers() const { return tedi::num_layers(cfg_.resolution); }
  int style_dim() const { return cfg_.style_dim; }
  int resolution() const { return cfg_.resolution; }
  /// Spatial size consumed by style layer i.
  int layer_resolution(int layer) const { return 4 << (layer / 2); }

  nn::ParamSet& mapping() { return mapping_; }
  nn::ParamSet& synthesis() { return synthesis_; }
  const nn::ParamSet& mapping() const { return mapping_; }
  const nn::ParamSet& synthesis() const { return synthesis_; }
  Discriminator& discriminator() { return disc_; }
  const Discriminator& discriminator() const { return disc_; }

  /// Mapping network f: (N, C) -> (N, C).
  ag::Var map(const ag::Var& z) const;
  /// f(z) broadcast to every layer: (N, C) -> (N, L, C).
  ag::Var map_to_style(const ag::Var& z) const;
  /// (N, L, C) -> (N, 3, R, R) in [-1, 1]. Layer i feeds synthesis block i only.
  ag::Var synthesize(const ag::Var& w, const NoiseInputs* noise = nullptr) const;
  ag::Var discriminate(const ag::Var& x) const { return disc_.score(x); }

  StyleW map_latent(const LatentZ& z) const;
  Image synthesize(const StyleW& w) const;
  double discriminator_score(const Image& x) const;

  NoiseInputs sample_noise(int batch, nn::Rng& rng) const;
  /// Freezes (or unfreezes) mapping, synthesis and discriminator weights.
  void set_trainable(bool on);
  /// Sets every weight to zero (degenerate network used by tests).
  void zero_weights();
  bool equals(const GeneratorModel& other) const;

  Checkpoint to_checkpoint() const;
  static GeneratorModel from_checkpoint(const Checkpoint& ck);

private:
  void check_style(const ag::Var& w) const;

  GeneratorConfig cfg_;
  nn::ParamSet mapping_;
  nn::ParamSet synthesis_;
  Discriminator disc_;
};

struct GanTrainConfig {
  int steps = 500;
  int batch = 16;
  double lr_generator = 2e-3;
  double lr_discriminator = 2e-3;
  double mapping_lr_scale = 0.1;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double gp_weight = 10.0;
  /// Probability that a fake batch mixes two latents at a random crossover layer.
  double mixing_prob = 0.0;
  std::uint64_t seed = 1;
};

struct GanTrainResult {
  GeneratorModel model;
  Checkpoint checkpoint;
  std::vector<double> generator_loss;
  std::vector<double> discriminator_loss;
};

GanTrainResult train_generator(std::span<const Image> images, const GeneratorConfig& model_cfg,
                               const GanTrainConfig& cfg);

}  // namespace tedi
