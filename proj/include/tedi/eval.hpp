#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tedi/attribute_map.hpp"
#include "tedi/data.hpp"
#include "tedi/features.hpp"
#include "tedi/generator.hpp"

namespace tedi {

/// Class index per attribute, in data::kAttributeNames order.
using AttributeValues = std::array<int, data::kAttributeNames.size()>;
AttributeValues attribute_values(const data::AttributeVector& a);

/// Frechet distance between Gaussians fitted to the rows of two (N, D)
/// feature matrices. Both covariances get `eps` added to the diagonal; the
/// matrix square root clamps negative eigenvalues to zero.
double frechet_distance(const Tensor& a, const Tensor& b, double eps = 1e-6);
/// Frechet distance on pooled FeatureExtractor features. Both sets need >= 16 images.
double fid_proxy(std::span<const Image> real, std::span<const Image> fake, const FeatureExtractor& features = FeatureExtractor());

/// Mean over stages (raw pixels, then each feature stage with unit-normalized
/// channels) of ||phi(a) - phi(b)||_2 / sqrt(H W). A pseudometric.
double lpips_proxy(const Image& a, const Image& b, const FeatureExtractor& features = FeatureExtractor());
/// Mean pairwise lpips_proxy.
double diversity_score(std::span<const Image> images, const FeatureExtractor& features = FeatureExtractor());

struct ClassifierConfig {
  int resolution = 16;
  int channels = 32;
  int hidden = 64;
};

/// Conv net with one softmax head per attribute.
class AttributeClassifier {
public:
  static constexpr double kRequiredAccuracy = 0.95;

  AttributeClassifier() = default;
  AttributeClassifier(const ClassifierConfig& cfg, std::uint64_t seed);

  const ClassifierConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// (N, 3, R, R) -> (N, total classes).
  ag::Var logits(const ag::Var& x) const;
  std::vector<AttributeValues> predict(std::span<const Image> images) const;
  AttributeValues predict(const Image& image) const;

  /// Records held-out accuracy; the classifier is usable only when every
  /// attribute reaches kRequiredAccuracy.
  void set_validation(const std::array<double, data::kAttributeNames.size()>& accuracy);
  const std::array<double, data::kAttributeNames.size()>& validation() const { return accuracy_; }
  bool validated() const;
  /// Throws ModelNotReady naming the attributes below the bar.
  void require_validated() const;

  Checkpoint to_checkpoint() const;
  static AttributeClassifier from_checkpoint(const Checkpoint& ck);

private:
  ClassifierConfig cfg_;
  nn::ParamSet params_;
  std::array<double, data::kAttributeNames.size()> accuracy_{};
};

std::array<double, data::kAttributeNames.size()> per_attribute_accuracy(const AttributeClassifier& c,
                                                                         std::span<const data::DatasetSample> samples);

struct ClassifierTrainConfig {
  int steps = 1500;
  int batch = 32;
  double lr = 1e-3;
  /// Upper bound of the per-image Gaussian pixel noise used as augmentation.
  double noise = 0.1;
  ClassifierConfig model;
  std::uint64_t seed = 1;
};

struct ClassifierTrainResult {
  AttributeClassifier classifier;
  Checkpoint checkpoint;
  std::vector<double> loss;
};

/// Trains on `train`, validates on `heldout`.
ClassifierTrainResult train_classifier(std::span<const data::DatasetSample> train,
                                       std::span<const data::DatasetSample> heldout, const ClassifierTrainConfig& cfg);

/// Fraction of images whose predicted values equal `expected` on every
/// attribute in `which`.
double attribute_accuracy(const AttributeClassifier& c, std::span<const Image> images,
                          const data::AttributeVector& expected, std::span<const std::string> which);

struct ProbeConfig {
  int samples = 64;
  std::uint64_t seed = 1;
  /// A layer is assigned when its flip rate exceeds ratio x the median over layers...
  double ratio = 2.0;
  /// ...and is at least this large.
  double min_rate = 0.02;
};

struct ProbeResult {
  AttributeLayerMap map;
  /// flip_rate[layer][attribute]
  std::vector<std::array<double, data::kAttributeNames.size()>> flip_rate;
};

using StyleSampler = std::function<StyleW(const LatentZ&)>;
using StyleRenderer = std::function<Image(const StyleW&)>;
using ImageClassifier = std::function<AttributeValues(const Image&)>;

/// For each sample and layer i, resamples row i of a random code and records
/// which classified attributes change.
ProbeResult probe_layer_attributes(const StyleSampler& map, const StyleRenderer& render, const ImageClassifier& classify,
                                   int num_layers, int style_dim, const ProbeConfig& cfg);
ProbeResult probe_layer_attributes(const GeneratorModel& g, const AttributeClassifier& c, const ProbeConfig& cfg);

/// {metric, value, n, config_hash, seed}
nlohmann::json metric_report(const std::string& metric, double value, int n, const nlohmann::json& config,
                             std::uint64_t seed);

}  // namespace tedi
