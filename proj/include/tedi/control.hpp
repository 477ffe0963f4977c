#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tedi/attribute_map.hpp"
#include "tedi/instance_opt.hpp"
#include "tedi/vls.hpp"

namespace tedi {

/// Layer i of the result is w_s[i] if i is in the mask, else w_c[i].
StyleW mix_styles(const StyleW& w_c, const StyleW& w_s, const LayerMask& mask);

/// Loaded models the pipelines run on. Missing pieces raise ModelNotReady
/// when a pipeline needs them.
struct Pipeline {
  const GeneratorModel* generator = nullptr;
  const EncoderModel* image_encoder = nullptr;
  const TextEncoderModel* text_encoder = nullptr;
  const AttributeLayerMap* layer_map = nullptr;
  const AttributeLexicon* lexicon = nullptr;
  const FeatureExtractor* features = nullptr;
};

/// Either an explicit layer set or "resolve from the caption".
struct MaskSpec {
  bool automatic = true;
  LayerMask layers;
  static MaskSpec auto_mask() { return {}; }
  static MaskSpec explicit_mask(LayerMask m) { return {false, std::move(m)}; }
};

/// Attributes of the caption that the active layer map knows about, and
/// their union mask. NoAttributeError when nothing is recognized.
LayerMask caption_mask(const Pipeline& p, std::string_view caption, std::vector<std::string>* attributes = nullptr);

struct Generation {
  std::vector<Image> images;
  std::vector<StyleW> codes;
  StyleW text_code;
  LayerMask locked;
};

/// Text code on the locked layers, freshly sampled codes everywhere else.
Generation generate_from_text(const Pipeline& p, std::string_view caption, int n, std::uint64_t seed,
                              const MaskSpec& locked = MaskSpec::auto_mask());

struct Manipulation {
  Image image;
  StyleW code;   // final code, after refinement if requested
  StyleW mixed;  // code right after mixing
  LayerMask applied;
  std::vector<TraceRow> trace;
};

/// Visual code with the masked layers taken from the caption's code,
/// optionally refined against the source with those layers frozen.
Manipulation manipulate(const Pipeline& p, const Image& x, std::string_view caption, const MaskSpec& mask, bool refine,
                        const OptConfig& opt = {});
/// Reconstruction of x, optionally refined.
Manipulation invert(const Pipeline& p, const Image& x, bool refine, const OptConfig& opt = {});

}  // namespace tedi
