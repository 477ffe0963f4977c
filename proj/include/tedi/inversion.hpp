#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tedi/data.hpp"
#include "tedi/features.hpp"
#include "tedi/generator.hpp"

namespace tedi {

enum class Modality { image, sketch, label };
std::string modality_name(Modality m);
Modality parse_modality(const std::string& name);
/// Input channels: 3 for photos, 1 for sketches, one per part id for labels.
int modality_channels(Modality m);

struct EncoderConfig {
  int resolution = 16;
  int style_dim = 64;
  int channels = 32;
  int hidden = 128;
  Modality modality = Modality::image;
};

/// Conv encoder from an input modality into Z.
class EncoderModel {
public:
  EncoderModel() = default;
  EncoderModel(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  Modality modality() const { return cfg_.modality; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// (N, in_channels, R, R) -> (N, C).
  ag::Var encode(const ag::Var& x) const;
  LatentZ encode_image(const Image& x) const;
  /// Network input for one sample of this encoder's modality.
  Tensor input_for(const data::DatasetSample& s) const;

  bool equals(const EncoderModel& other) const { return params_.equals(other.params_); }

private:
  EncoderConfig cfg_;
  nn::ParamSet params_;
};

struct InversionLossWeights {
  double lambda1 = 5e-2;  // perceptual
  double lambda2 = 1e-1;  // adversarial
  double lambda3 = 10.0;  // gradient penalty
  void validate() const;
};

/// Mean over the batch of ||z_s - E(x_s)||^2.
ag::Var latent_baseline_loss(const ag::Var& z_s, const Tensor& x_s, const EncoderModel& encoder);
double latent_baseline_loss(const LatentZ& z_s, const Image& x_s, const EncoderModel& encoder);

struct EncoderLossTerms {
  ag::Var total;
  ag::Var pixel;        // mean_n ||target - G(E(x))||^2
  ag::Var perceptual;   // mean_n ||F(target) - F(G(E(x)))||^2
  ag::Var adversarial;  // mean_n D(G(E(x)))
};

/// pixel + lambda1 * perceptual - lambda2 * adversarial. `input` feeds the
/// encoder, `target` is the image the reconstruction is compared against.
EncoderLossTerms encoder_loss(const Tensor& input, const Tensor& target, const EncoderModel& encoder,
                              const GeneratorModel& generator, const Discriminator& discriminator,
                              const FeatureExtractor& features, const InversionLossWeights& weights);
inline EncoderLossTerms encoder_loss(const Tensor& x, const EncoderModel& encoder, const GeneratorModel& generator,
                                     const Discriminator& discriminator, const FeatureExtractor& features,
                                     const InversionLossWeights& weights) {
  return encoder_loss(x, x, encoder, generator, discriminator, features, weights);
}

struct DiscriminatorLossTerms {
  double value = 0.0;
  double fake = 0.0;     // mean D(G(E(x)))
  double real = 0.0;     // mean D(target)
  double penalty = 0.0;  // (lambda3/2) mean ||grad D(target)||^2
  /// Scalar whose discriminator-parameter gradient equals that of `value`.
  ag::Var surrogate;
};

/// mean D(G(E(x))) - mean D(target) + (lambda3/2) mean ||grad_x D(target)||^2.
DiscriminatorLossTerms inversion_discriminator_loss(const Tensor& input, const Tensor& target,
                                                    const EncoderModel& encoder, const GeneratorModel& generator,
                                                    const Discriminator& discriminator,
                                                    const InversionLossWeights& weights);

/// Reconstruction G(f(E(x))) of a batch of encoder inputs.
Tensor reconstruct(const EncoderModel& encoder, const GeneratorModel& generator, const Tensor& input);
/// Mean per-pixel squared error between reconstructions and targets.
double reconstruction_mse(const EncoderModel& encoder, const GeneratorModel& generator, const Tensor& input,
                          const Tensor& target);

struct InversionTrainConfig {
  int steps = 300;
  int batch = 16;
  double lr_encoder = 1e-3;
  double lr_discriminator = 1e-3;
  InversionLossWeights weights;
  EncoderConfig encoder;
  int disc_channels = 32;
  /// Sketch/label encoders: compare against the input itself instead of the paired photo.
  bool reconstruct_input = false;
  std::uint64_t seed = 1;
};

struct InversionTrainResult {
  EncoderModel encoder;
  Discriminator discriminator;
  Checkpoint checkpoint;
  std::vector<double> encoder_loss;
  std::vector<double> discriminator_loss;
};

/// Alternating encoder / discriminator training on real photos. The
/// generator and feature extractor are left untouched.
InversionTrainResult train_inversion(std::span<const data::DatasetSample> dataset, const GeneratorModel& generator,
                                     const InversionTrainConfig& cfg);
InversionTrainResult train_modality_encoder(Modality modality, std::span<const data::DatasetSample> dataset,
                                            const GeneratorModel& generator, const InversionTrainConfig& cfg);
/// Encoder trained only on synthesized pairs (z, G(f(z))) with the latent loss.
InversionTrainResult train_latent_baseline(const GeneratorModel& generator, const InversionTrainConfig& cfg);

Checkpoint encoder_checkpoint(const EncoderModel& encoder, const Discriminator* discriminator,
                              const std::string& generator_hash);
EncoderModel encoder_from_checkpoint(const Checkpoint& ck);

}  // namespace tedi
