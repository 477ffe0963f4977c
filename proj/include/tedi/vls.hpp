#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tedi/data.hpp"
#include "tedi/generator.hpp"
#include "tedi/inversion.hpp"

namespace tedi {

inline constexpr int kMaxCaptionTokens = 32;

/// Lowercase, split on anything that is not a letter or digit.
std::vector<std::string> tokenize(std::string_view text);

/// Token ids; id 0 is the unknown token.
struct Caption {
  std::vector<int> ids;
  friend bool operator==(const Caption&, const Caption&) = default;
};

class Vocabulary {
public:
  static constexpr const char* kUnknown = "<unk>";

  Vocabulary();
  /// Sorted set of all tokens in `texts`, after the unknown token.
  static Vocabulary build(std::span<const std::string> texts);
  /// One token per line; line number is the id.
  static Vocabulary from_text(std::string_view text);
  std::string to_text() const;
  std::string hash() const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  /// Throws TokenizationError on empty or over-long captions.
  Caption encode(std::string_view text) const;
  void validate(const Caption& c) const;

private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

struct TextEncoderConfig {
  int embed_dim = 64;
  int hidden = 64;
  int style_dim = 64;
};

/// Token embedding, gated recurrent encoder, mean pool over time, linear
/// projection into Z.
class TextEncoderModel {
public:
  TextEncoderModel() = default;
  TextEncoderModel(Vocabulary vocab, const TextEncoderConfig& cfg, std::uint64_t seed);

  const TextEncoderConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// (N, C) codes for a batch of captions.
  ag::Var encode(std::span<const Caption> captions) const;
  LatentZ encode_text(const Caption& caption) const;
  LatentZ encode_text(std::string_view text) const { return encode_text(vocab_.encode(text)); }

  bool equals(const TextEncoderModel& o) const { return params_.equals(o.params_); }
  Checkpoint to_checkpoint() const;
  /// `vocab` must hash to the value recorded in the checkpoint.
  static TextEncoderModel from_checkpoint(const Checkpoint& ck, const Vocabulary& vocab);

private:
  TextEncoderConfig cfg_;
  Vocabulary vocab_;
  nn::ParamSet params_;
};

/// Per-layer weights p_i of the alignment distance.
struct LayerWeights {
  std::vector<double> p;
  static LayerWeights uniform(int num_layers);
  void validate(int num_layers) const;
};

enum class VlsVariant {
  printed,   // ||sum_i p_i (a_i - b_i)||^2
  per_layer  // sum_i p_i ||a_i - b_i||^2
};

/// Distance between paired (N, L, C) codes, (N).
ag::Var vls_distance(const ag::Var& w_v, const ag::Var& w_l, const LayerWeights& p,
                     VlsVariant variant = VlsVariant::printed);
double vls_loss(const StyleW& w_v, const StyleW& w_l, const LayerWeights& p, VlsVariant variant = VlsVariant::printed);
/// d(i, j) = distance(image code i, text code j), (N, M).
ag::Var vls_pairwise(const ag::Var& w_v, const ag::Var& w_l, const LayerWeights& p,
                     VlsVariant variant = VlsVariant::printed);

/// Bidirectional in-batch hinge: for each matched pair i and every j != i,
/// [m + d_ii - d_ji]_+ (caption anchor) and [m + d_ii - d_ij]_+ (image
/// anchor), summed and divided by N(N-1).
ag::Var ranking_loss(const ag::Var& image_w, const ag::Var& text_w, double margin, const LayerWeights& p,
                     VlsVariant variant = VlsVariant::printed);
double ranking_loss(std::span<const StyleW> image_w, std::span<const StyleW> text_w, double margin,
                    const LayerWeights& p, VlsVariant variant = VlsVariant::printed);

struct TextTrainConfig {
  int steps = 500;
  int batch = 256;
  double lr = 1e-2;
  double margin = 0.2;
  double ranking_weight = 1.0;
  VlsVariant variant = VlsVariant::printed;
  std::vector<double> layer_weights;  // empty: uniform 1/L
  TextEncoderConfig model;
  std::uint64_t seed = 1;
};

struct TextTrainResult {
  TextEncoderModel model;
  Checkpoint checkpoint;
  std::vector<double> loss;
};

/// Aligns caption codes with frozen image-encoder codes in W.
TextTrainResult train_text_encoder(std::span<const data::DatasetSample> dataset, const EncoderModel& image_encoder,
                                   const GeneratorModel& generator, const TextTrainConfig& cfg);

/// W code f(E(x)) of each image, (N, L, C).
Tensor image_codes(const EncoderModel& encoder, const GeneratorModel& generator, std::span<const Image> images);
/// W code f(E_l(c)) of each caption, (N, L, C).
Tensor text_codes(const TextEncoderModel& text, const GeneratorModel& generator, std::span<const Caption> captions);

/// Gallery indices by ascending distance to the query, ties by index; first k.
std::vector<int> retrieve(const Caption& query, std::span<const Image> gallery, int k, const TextEncoderModel& text,
                          const EncoderModel& image_encoder, const GeneratorModel& generator,
                          const LayerWeights& p = {}, VlsVariant variant = VlsVariant::printed);
/// Same ranking from precomputed codes: query (1, L, C), gallery (N, L, C).
std::vector<int> rank_by_distance(const Tensor& query_code, const Tensor& gallery_codes, int k, const LayerWeights& p,
                                  VlsVariant variant = VlsVariant::printed);

}  // namespace tedi
