#include "tedi/control.hpp"

#include "tedi/error.hpp"

namespace tedi {

StyleW mix_styles(const StyleW& w_c, const StyleW& w_s, const LayerMask& mask) {
  if (w_c.num_layers() != w_s.num_layers() || w_c.dim() != w_s.dim())
    throw ShapeError("mix_styles: content and style codes differ in shape");
  mask.validate(w_c.num_layers());
  StyleW out = w_c;
  for (int i : mask.indices()) {
    auto src = w_s.row(i);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

namespace {

const GeneratorModel& need_generator(const Pipeline& p) {
  if (!p.generator) throw ModelNotReady("no generator loaded");
  return *p.generator;
}

const TextEncoderModel& need_text(const Pipeline& p) {
  if (!p.text_encoder) throw ModelNotReady("no text encoder loaded");
  if (p.text_encoder->config().style_dim != need_generator(p).style_dim())
    throw ModelNotReady("text encoder and generator disagree on the style dimension");
  return *p.text_encoder;
}

const EncoderModel& need_image_encoder(const Pipeline& p) {
  if (!p.image_encoder) throw ModelNotReady("no image encoder loaded");
  return *p.image_encoder;
}

LayerMask resolve(const Pipeline& p, const MaskSpec& spec, std::string_view caption) {
  const int layers = need_generator(p).num_layers();
  if (!spec.automatic) {
    spec.layers.validate(layers);
    return spec.layers;
  }
  return caption_mask(p, caption);
}

OptResult refine_code(const Pipeline& p, const Image& x, const StyleW& init, const LayerMask& frozen, OptConfig opt) {
  if (!p.features) throw ModelNotReady("no feature extractor loaded");
  opt.frozen = frozen;
  return optimize_instance(x, init, {need_generator(p), need_image_encoder(p), *p.features}, opt);
}

}  // namespace

LayerMask caption_mask(const Pipeline& p, std::string_view caption, std::vector<std::string>* attributes) {
  if (!p.layer_map) throw ModelNotReady("no attribute layer map loaded");
  if (!p.lexicon) throw ModelNotReady("no attribute lexicon loaded");
  if (p.generator && p.layer_map->num_layers() != p.generator->num_layers())
    throw ModelNotReady("layer map is for " + std::to_string(p.layer_map->num_layers()) + " layers, generator has " +
                        std::to_string(p.generator->num_layers()));
  std::vector<std::string> known;
  for (const auto& a : p.lexicon->detect(caption))
    if (p.layer_map->contains(a)) known.push_back(a);
  if (known.empty()) throw NoAttributeError("no known attribute mentioned in caption: \"" + std::string(caption) + "\"");
  if (attributes) *attributes = known;
  return layers_for_attributes(*p.layer_map, known);
}

Generation generate_from_text(const Pipeline& p, std::string_view caption, int n, std::uint64_t seed,
                              const MaskSpec& locked) {
  if (n < 1) throw ConfigError("n must be ≥ 1");
  const GeneratorModel& g = need_generator(p);
  const TextEncoderModel& text = need_text(p);
  Generation out;
  out.text_code = g.map_latent(text.encode_text(caption));
  out.locked = resolve(p, locked, caption);
  const LayerMask replaced = out.locked.complement(g.num_layers());
  nn::Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    LatentZ z(std::vector<double>(static_cast<std::size_t>(g.style_dim())));
    for (double& v : z.values()) v = rng.normal();
    out.codes.push_back(mix_styles(out.text_code, g.map_latent(z), replaced));
    out.images.push_back(g.synthesize(out.codes.back()));
  }
  return out;
}

Manipulation manipulate(const Pipeline& p, const Image& x, std::string_view caption, const MaskSpec& mask, bool refine,
                        const OptConfig& opt) {
  const GeneratorModel& g = need_generator(p);
  const EncoderModel& e = need_image_encoder(p);
  const TextEncoderModel& text = need_text(p);
  Manipulation out;
  out.applied = resolve(p, mask, caption);
  const StyleW w_c = g.map_latent(e.encode_image(x));
  const StyleW w_s = g.map_latent(text.encode_text(caption));
  out.mixed = mix_styles(w_c, w_s, out.applied);
  out.code = out.mixed;
  if (refine) {
    OptResult r = refine_code(p, x, out.mixed, out.applied, opt);
    out.code = r.code;
    out.trace = std::move(r.trace);
  }
  out.image = g.synthesize(out.code);
  return out;
}

Manipulation invert(const Pipeline& p, const Image& x, bool refine, const OptConfig& opt) {
  const GeneratorModel& g = need_generator(p);
  const EncoderModel& e = need_image_encoder(p);
  Manipulation out;
  out.mixed = g.map_latent(e.encode_image(x));
  out.code = out.mixed;
  if (refine) {
    OptResult r = refine_code(p, x, out.mixed, LayerMask{}, opt);
    out.code = r.code;
    out.trace = std::move(r.trace);
  }
  out.image = g.synthesize(out.code);
  return out;
}

}  // namespace tedi
