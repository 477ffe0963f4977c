#include "tedi/inversion.hpp"

#include <cmath>

#include "tedi/error.hpp"

namespace tedi {

namespace {
constexpr double kSlope = 0.2;
}

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::sketch: return "sketch";
    case Modality::label: return "label";
  }
  return "image";
}

Modality parse_modality(const std::string& name) {
  if (name == "image") return Modality::image;
  if (name == "sketch") return Modality::sketch;
  if (name == "label") return Modality::label;
  throw ConfigError("unknown modality '" + name + "' (expected image, sketch or label)");
}

int modality_channels(Modality m) {
  switch (m) {
    case Modality::image: return 3;
    case Modality::sketch: return 1;
    case Modality::label: return data::kNumParts;
  }
  return 3;
}

EncoderModel::EncoderModel(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  num_layers(cfg.resolution);  // validates R
  nn::Rng rng(seed);
  nn::add_conv(params_, "conv0", modality_channels(cfg.modality), cfg.channels, 3, rng);
  int k = 1;
  for (int r = cfg.resolution; r > 4; r /= 2, ++k) nn::add_conv(params_, "conv" + std::to_string(k), cfg.channels, cfg.channels, 3, rng);
  nn::add_linear(params_, "fc0", cfg.channels * 16, cfg.hidden, rng);
  nn::add_linear(params_, "fc1", cfg.hidden, cfg.style_dim, rng, 1.0);
}

ag::Var EncoderModel::encode(const ag::Var& x) const {
  const int cin = modality_channels(cfg_.modality);
  if (x.value().rank() != 4 || x.dim(1) != cin || x.dim(2) != cfg_.resolution || x.dim(3) != cfg_.resolution)
    throw ShapeError(modality_name(cfg_.modality) + " encoder expects (N, " + std::to_string(cin) + ", " +
                     std::to_string(cfg_.resolution) + ", " + std::to_string(cfg_.resolution) + "), got " +
                     shape_str(x.shape()));
  ag::Var h = ag::leaky_relu(nn::conv(params_, "conv0", x), kSlope);
  int k = 1;
  for (int r = cfg_.resolution; r > 4; r /= 2, ++k)
    h = ag::leaky_relu(nn::conv(params_, "conv" + std::to_string(k), ag::avgpool2x(h)), kSlope);
  h = ag::reshape(h, {x.dim(0), cfg_.channels * 16});
  return nn::linear(params_, "fc1", ag::leaky_relu(nn::linear(params_, "fc0", h), kSlope));
}

LatentZ EncoderModel::encode_image(const Image& x) const {
  ag::NoGradGuard ng;
  const Image batch[] = {x};
  return LatentZ::from_batch(encode(ag::constant(images_to_tensor(batch))).value(), 0);
}

Tensor EncoderModel::input_for(const data::DatasetSample& s) const {
  const Image* img = &s.image;
  Image one_hot;
  if (cfg_.modality == Modality::sketch) img = &s.sketch;
  if (cfg_.modality == Modality::label) {
    one_hot = data::label_one_hot(s.label_map);
    img = &one_hot;
  }
  return images_to_tensor(std::span<const Image>(img, 1));
}

void InversionLossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0))
    throw ConfigError("inversion loss weights must be >= 0");
}

ag::Var latent_baseline_loss(const ag::Var& z_s, const Tensor& x_s, const EncoderModel& encoder) {
  ag::Var z = encoder.encode(ag::constant(x_s));
  if (z_s.shape() != z.shape())
    throw ShapeError("latent " + shape_str(z_s.shape()) + " does not match encoder output " + shape_str(z.shape()));
  return ag::mean(ag::sum_squares_per_sample(ag::sub(z_s, z)));
}

double latent_baseline_loss(const LatentZ& z_s, const Image& x_s, const EncoderModel& encoder) {
  ag::NoGradGuard ng;
  const Image batch[] = {x_s};
  return latent_baseline_loss(ag::constant(z_s.as_batch()), images_to_tensor(batch), encoder).value().item();
}

namespace {

ag::Var reconstruct_var(const EncoderModel& encoder, const GeneratorModel& generator, const Tensor& input) {
  return generator.synthesize(generator.map_to_style(encoder.encode(ag::constant(input))));
}

}  // namespace

EncoderLossTerms encoder_loss(const Tensor& input, const Tensor& target, const EncoderModel& encoder,
                              const GeneratorModel& generator, const Discriminator& discriminator,
                              const FeatureExtractor& features, const InversionLossWeights& weights) {
  weights.validate();
  ag::Var y = reconstruct_var(encoder, generator, input);
  if (y.shape() != target.shape())
    throw ShapeError("reconstruction " + shape_str(y.shape()) + " does not match target " + shape_str(target.shape()));
  ag::Var t = ag::constant(target);
  EncoderLossTerms terms;
  terms.pixel = ag::mean(ag::sum_squares_per_sample(ag::sub(y, t)));
  terms.perceptual = ag::mean(features.distance(y, t));
  terms.adversarial = ag::mean(discriminator.score(y));
  terms.total = ag::sub(ag::add(terms.pixel, ag::scale(terms.perceptual, weights.lambda1)),
                        ag::scale(terms.adversarial, weights.lambda2));
  return terms;
}

DiscriminatorLossTerms inversion_discriminator_loss(const Tensor& input, const Tensor& target,
                                                    const EncoderModel& encoder, const GeneratorModel& generator,
                                                    const Discriminator& discriminator,
                                                    const InversionLossWeights& weights) {
  weights.validate();
  const Tensor fake = reconstruct(encoder, generator, input);
  ag::Var fake_scores = ag::mean(discriminator.score(ag::constant(fake)));
  GradientPenalty gp = gradient_penalty(discriminator, target, weights.lambda3);
  ag::Var real_scores = ag::mean(gp.scores);
  DiscriminatorLossTerms terms;
  terms.fake = fake_scores.value().item();
  terms.real = real_scores.value().item();
  terms.penalty = gp.value;
  terms.value = terms.fake - terms.real + terms.penalty;
  terms.surrogate = ag::add(ag::sub(fake_scores, real_scores), gp.surrogate);
  return terms;
}

Tensor reconstruct(const EncoderModel& encoder, const GeneratorModel& generator, const Tensor& input) {
  ag::NoGradGuard ng;
  return reconstruct_var(encoder, generator, input).value();
}

double reconstruction_mse(const EncoderModel& encoder, const GeneratorModel& generator, const Tensor& input,
                          const Tensor& target) {
  const Tensor y = reconstruct(encoder, generator, input);
  if (y.shape() != target.shape()) throw ShapeError("reconstruction does not match target shape");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - target[i]) * (y[i] - target[i]);
  return s / static_cast<double>(y.size());
}

Checkpoint encoder_checkpoint(const EncoderModel& encoder, const Discriminator* discriminator,
                              const std::string& generator_hash) {
  const EncoderConfig& c = encoder.config();
  Checkpoint ck("encoder");
  ck.meta() = {{"modality", modality_name(c.modality)},
               {"resolution", c.resolution},
               {"style_dim", c.style_dim},
               {"channels", c.channels},
               {"hidden", c.hidden},
               {"in_channels", modality_channels(c.modality)},
               {"generator_hash", generator_hash}};
  ck.add_params("encoder/", encoder.params());
  if (discriminator) {
    ck.meta()["disc_channels"] = discriminator->config().channels;
    ck.add_params("discriminator/", discriminator->params());
  }
  return ck;
}

EncoderModel encoder_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "encoder") throw ParseError("expected an encoder checkpoint, got '" + ck.kind() + "'");
  const auto& m = ck.meta();
  EncoderConfig c;
  c.modality = parse_modality(m.at("modality").get<std::string>());
  c.resolution = m.at("resolution").get<int>();
  c.style_dim = m.at("style_dim").get<int>();
  c.channels = m.at("channels").get<int>();
  c.hidden = m.at("hidden").get<int>();
  EncoderModel e(c, 0);
  ck.load_params("encoder/", e.params());
  return e;
}

namespace {

Discriminator discriminator_from(const Checkpoint& ck) {
  const auto& m = ck.meta();
  Discriminator d({m.at("resolution").get<int>(), 3, m.at("disc_channels").get<int>()}, 0);
  ck.load_params("discriminator/", d.params());
  return d;
}

EncoderConfig encoder_config_for(const GeneratorModel& g, const InversionTrainConfig& cfg, Modality m) {
  EncoderConfig c = cfg.encoder;
  c.resolution = g.resolution();
  c.style_dim = g.style_dim();
  c.modality = m;
  return c;
}

Image as_rgb_target(const Image& x) {
  if (x.channels() == 3) return x;
  Image out(3, x.height(), x.width());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) out.at(c, y, xx) = 2.0 * x.at(0, y, xx) - 1.0;
  return out;
}

InversionTrainResult train_encoder(Modality modality, std::span<const data::DatasetSample> dataset,
                                   const GeneratorModel& generator, const InversionTrainConfig& cfg) {
  cfg.weights.validate();
  if (dataset.empty()) throw ConfigError("encoder training: empty dataset");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("encoder training: steps must be >= 0 and batch >= 1");
  if (cfg.reconstruct_input && modality != Modality::sketch)
    throw ConfigError("reconstruct_input is only defined for sketch encoders");
  const int r = generator.resolution();
  for (const auto& s : dataset)
    if (s.image.height() != r || s.image.width() != r)
      throw ConfigError("encoder training: dataset resolution does not match the generator");

  GeneratorModel g = generator;
  g.set_trainable(false);
  const FeatureExtractor features;
  EncoderModel encoder(encoder_config_for(g, cfg, modality), cfg.seed);
  Discriminator disc({r, 3, cfg.disc_channels}, cfg.seed ^ 0xd15cULL);
  nn::Adam opt_e(cfg.lr_encoder, 0.9, 0.999);
  nn::Adam opt_d(cfg.lr_discriminator, 0.9, 0.999);
  nn::Rng rng(cfg.seed ^ 0x1a7eULL);

  std::vector<Image> inputs, targets;
  for (const auto& s : dataset) {
    const Tensor t = encoder.input_for(s);
    inputs.push_back(tensor_to_image(t, 0));
    targets.push_back(cfg.reconstruct_input ? as_rgb_target(s.sketch) : s.image);
  }

  InversionTrainResult result;
  const int n = static_cast<int>(dataset.size());
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Image> bi, bt;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto k = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
      bi.push_back(inputs[k]);
      bt.push_back(targets[k]);
    }
    const Tensor in = images_to_tensor(bi), tg = images_to_tensor(bt);

    DiscriminatorLossTerms dl = inversion_discriminator_loss(in, tg, encoder, g, disc, cfg.weights);
    ag::backward(dl.surrogate);
    opt_d.step(disc.params());

    disc.params().set_trainable(false);
    EncoderLossTerms el = encoder_loss(in, tg, encoder, g, disc, features, cfg.weights);
    ag::backward(el.total);
    disc.params().set_trainable(true);
    opt_e.step(encoder.params());

    const double ev = el.total.value().item();
    if (!std::isfinite(ev) || !std::isfinite(dl.value)) throw DivergenceError(step, "inversion loss is not finite");
    result.encoder_loss.push_back(ev);
    result.discriminator_loss.push_back(dl.value);
  }
  if (!g.equals(generator)) throw Error("internal_error", "generator weights changed during encoder training");

  result.checkpoint = encoder_checkpoint(encoder, &disc, generator.to_checkpoint().hash());
  result.checkpoint.meta()["train"] = {{"steps", cfg.steps}, {"seed", cfg.seed}, {"reconstruct_input", cfg.reconstruct_input}};
  result.encoder = encoder_from_checkpoint(result.checkpoint);
  result.discriminator = discriminator_from(result.checkpoint);
  return result;
}

}  // namespace

InversionTrainResult train_inversion(std::span<const data::DatasetSample> dataset, const GeneratorModel& generator,
                                     const InversionTrainConfig& cfg) {
  return train_encoder(Modality::image, dataset, generator, cfg);
}

InversionTrainResult train_modality_encoder(Modality modality, std::span<const data::DatasetSample> dataset,
                                            const GeneratorModel& generator, const InversionTrainConfig& cfg) {
  if (modality == Modality::image) throw ConfigError("modality encoders take sketch or label inputs");
  return train_encoder(modality, dataset, generator, cfg);
}

InversionTrainResult train_latent_baseline(const GeneratorModel& generator, const InversionTrainConfig& cfg) {
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("encoder training: steps must be >= 0 and batch >= 1");
  GeneratorModel g = generator;
  g.set_trainable(false);
  EncoderModel encoder(encoder_config_for(g, cfg, Modality::image), cfg.seed);
  nn::Adam opt(cfg.lr_encoder, 0.9, 0.999);
  nn::Rng rng(cfg.seed ^ 0xba5eULL);
  InversionTrainResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor z = rng.normal_tensor({cfg.batch, g.style_dim()});
    Tensor x;
    {
      ag::NoGradGuard ng;
      x = g.synthesize(g.map_to_style(ag::constant(z))).value();
    }
    ag::Var loss = latent_baseline_loss(ag::constant(z), x, encoder);
    ag::backward(loss);
    opt.step(encoder.params());
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw DivergenceError(step, "latent loss is not finite");
    result.encoder_loss.push_back(v);
  }
  result.checkpoint = encoder_checkpoint(encoder, nullptr, generator.to_checkpoint().hash());
  result.checkpoint.meta()["train"] = {{"steps", cfg.steps}, {"seed", cfg.seed}, {"objective", "latent"}};
  result.encoder = encoder_from_checkpoint(result.checkpoint);
  return result;
}

}  // namespace tedi
