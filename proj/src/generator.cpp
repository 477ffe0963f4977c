#include "tedi/generator.hpp"

#include <algorithm>
#include <cmath>

#include "tedi/error.hpp"

namespace tedi {

int num_layers(int resolution) {
  if (resolution < 16 || (resolution & (resolution - 1)) != 0)
    throw InvalidResolution("resolution must be a power of two >= 16, got " + std::to_string(resolution));
  int log2 = 0;
  while ((1 << log2) < resolution) ++log2;
  return 2 * log2 - 2;
}

int resolution_for_layers(int layers) {
  if (layers < 6 || layers % 2 != 0) throw InvalidResolution("layer count must be even and >= 6, got " + std::to_string(layers));
  return 1 << ((layers + 2) / 2);
}

LatentZ::LatentZ(std::vector<double> values) : values_(std::move(values)) {}

LatentZ LatentZ::from_batch(const Tensor& batch, int index) {
  if (batch.rank() != 2) throw ShapeError("latent batch must be (N, C), got " + shape_str(batch.shape()));
  const int c = batch.dim(1);
  return LatentZ(std::vector<double>(batch.ptr() + static_cast<std::size_t>(index) * c,
                                     batch.ptr() + static_cast<std::size_t>(index + 1) * c));
}

Tensor LatentZ::as_batch() const { return Tensor({1, dim()}, values_); }

StyleW::StyleW(int num_layers, int dim, double fill)
    : layers_(num_layers), dim_(dim), values_(static_cast<std::size_t>(num_layers) * dim, fill) {}

StyleW StyleW::from_tensor(const Tensor& t, int index) {
  if (t.rank() == 2) {
    StyleW w(t.dim(0), t.dim(1));
    std::copy(t.ptr(), t.ptr() + t.size(), w.values_.begin());
    return w;
  }
  if (t.rank() != 3) throw ShapeError("style tensor must be (L, C) or (N, L, C), got " + shape_str(t.shape()));
  StyleW w(t.dim(1), t.dim(2));
  std::copy_n(t.ptr() + static_cast<std::size_t>(index) * w.values_.size(), w.values_.size(), w.values_.begin());
  return w;
}

std::span<const double> StyleW::row(int layer) const {
  if (layer < 0 || layer >= layers_) throw ShapeError("style layer out of range: " + std::to_string(layer));
  return std::span<const double>(values_).subspan(static_cast<std::size_t>(layer) * dim_, static_cast<std::size_t>(dim_));
}

std::span<double> StyleW::row(int layer) {
  if (layer < 0 || layer >= layers_) throw ShapeError("style layer out of range: " + std::to_string(layer));
  return std::span<double>(values_).subspan(static_cast<std::size_t>(layer) * dim_, static_cast<std::size_t>(dim_));
}

Tensor StyleW::as_batch() const { return Tensor({1, layers_, dim_}, values_); }

bool StyleW::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

namespace {
constexpr double kSlope = 0.2;

int disc_stages(int resolution) {
  int stages = 0;
  for (int r = resolution; r > 4; r /= 2) ++stages;
  return stages + 1;
}
}  // namespace

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  nn::Rng rng(seed);
  int in = cfg.in_channels;
  const int stages = disc_stages(cfg.resolution);
  for (int k = 0; k < stages; ++k) {
    nn::add_conv(params_, "conv" + std::to_string(k), in, cfg.channels, 3, rng);
    in = cfg.channels;
  }
  nn::add_linear(params_, "out", cfg.channels * 16, 1, rng, 1.0);
}

ag::Var Discriminator::score(const ag::Var& x) const {
  if (x.value().rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.resolution || x.dim(3) != cfg_.resolution)
    throw ShapeError("discriminator expects (N, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(cfg_.resolution) + ", " + std::to_string(cfg_.resolution) + "), got " +
                     shape_str(x.shape()));
  const int stages = disc_stages(cfg_.resolution);
  ag::Var h = x;
  for (int k = 0; k < stages; ++k) {
    h = ag::leaky_relu(nn::conv(params_, "conv" + std::to_string(k), h), kSlope);
    if (k + 1 < stages) h = ag::avgpool2x(h);
  }
  const int n = x.dim(0);
  return ag::reshape(nn::linear(params_, "out", ag::reshape(h, {n, cfg_.channels * 16})), {n});
}

std::pair<ag::Var, ag::Var> Discriminator::score_with_tangent(const ag::Var& x, const Tensor& tangent) const {
  if (tangent.shape() != x.shape()) throw ShapeError("tangent must match the input shape");
  const int stages = disc_stages(cfg_.resolution);
  ag::Var h = x;
  ag::Var t = ag::constant(tangent);
  for (int k = 0; k < stages; ++k) {
    const std::string name = "conv" + std::to_string(k);
    ag::Var pre = nn::conv(params_, name, h);
    h = ag::leaky_relu(pre, kSlope);
    // Leaky ReLU is piecewise linear: its Jacobian is a fixed 0/1 mask.
    Tensor mask(pre.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = pre.value()[i] > 0.0 ? 1.0 : kSlope;
    t = ag::mul_const(ag::conv2d(t, params_[name + ".weight"], ag::Var()), mask);
    if (k + 1 < stages) {
      h = ag::avgpool2x(h);
      t = ag::avgpool2x(t);
    }
  }
  const int n = x.dim(0);
  ag::Var s = ag::reshape(nn::linear(params_, "out", ag::reshape(h, {n, cfg_.channels * 16})), {n});
  ag::Var j = ag::reshape(ag::linear(ag::reshape(t, {n, cfg_.channels * 16}), params_["out.weight"], ag::Var()), {n});
  return {s, j};
}

GradientPenalty gradient_penalty(const Discriminator& d, const Tensor& x, double weight) {
  if (weight < 0.0) throw ConfigError("gradient penalty weight must be >= 0");
  const int n = x.dim(0);
  ag::Var input = ag::parameter(x);
  {
    ag::Var s = d.score(input);
    const std::vector<ag::Var> targets{input};
    ag::backward(ag::sum(s), targets);
  }
  GradientPenalty gp;
  gp.input_gradient = input.grad().empty() ? Tensor(x.shape(), 0.0) : input.grad();
  double total = 0.0;
  for (double g : gp.input_gradient.values()) total += g * g;
  gp.value = 0.5 * weight * total / n;
  // d/dtheta (w/2N) sum ||g||^2 = (w/N) d/dtheta <g(theta), stop(g)>
  auto [scores, jvp] = d.score_with_tangent(ag::constant(x), gp.input_gradient);
  gp.scores = scores;
  gp.surrogate = ag::scale(ag::sum(jvp), weight / n);
  return gp;
}

GeneratorModel::GeneratorModel(const GeneratorConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), disc_({cfg.resolution, 3, cfg.disc_channels}, seed ^ 0xd15cULL) {
  const int layers = tedi::num_layers(cfg.resolution);
  nn::Rng rng(seed);
  const int c = cfg.style_dim, ch = cfg.channels;
  for (int k = 0; k < cfg.mapping_layers; ++k)
    nn::add_linear(mapping_, "map" + std::to_string(k), c, c, rng, k + 1 < cfg.mapping_layers ? std::sqrt(2.0) : 1.0);
  synthesis_.add("const", rng.normal_tensor({1, ch, 4, 4}));
  for (int i = 0; i < layers; ++i) {
    const std::string id = std::to_string(i);
    if (i > 0) nn::add_conv(synthesis_, "conv" + id, ch, ch, 3, rng);
    synthesis_.add("noise" + id, Tensor({ch}, 0.0));
    nn::add_linear(synthesis_, "style" + id + ".scale", c, ch, rng, 1.0);
    nn::add_linear(synthesis_, "style" + id + ".shift", c, ch, rng, 1.0);
  }
  nn::add_conv(synthesis_, "to_rgb", ch, 3, 1, rng, 1.0);
}

ag::Var GeneratorModel::map(const ag::Var& z) const {
  if (z.value().rank() != 2 || z.dim(1) != cfg_.style_dim)
    throw ShapeError("latent must be (N, " + std::to_string(cfg_.style_dim) + "), got " + shape_str(z.shape()));
  ag::Var h = ag::pixel_norm(z);
  for (int k = 0; k < cfg_.mapping_layers; ++k) {
    h = nn::linear(mapping_, "map" + std::to_string(k), h);
    if (k + 1 < cfg_.mapping_layers) h = ag::leaky_relu(h, kSlope);
  }
  return h;
}

ag::Var GeneratorModel::map_to_style(const ag::Var& z) const { return ag::repeat_layers(map(z), num_layers()); }

void GeneratorModel::check_style(const ag::Var& w) const {
  if (w.value().rank() != 3 || w.dim(1) != num_layers() || w.dim(2) != cfg_.style_dim)
    throw ShapeError("style code must be (N, " + std::to_string(num_layers()) + ", " + std::to_string(cfg_.style_dim) +
                     "), got " + shape_str(w.shape()));
}

ag::Var GeneratorModel::synthesize(const ag::Var& w, const NoiseInputs* noise) const {
  check_style(w);
  const int n = w.dim(0), layers = num_layers();
  if (noise && static_cast<int>(noise->size()) != layers) throw ShapeError("noise inputs must have one map per layer");
  ag::Var x = ag::broadcast_batch(synthesis_["const"], n);
  for (int i = 0; i < layers; ++i) {
    const std::string id = std::to_string(i);
    if (i > 0) {
      if (i % 2 == 0) x = ag::upsample2x(x);
      x = nn::conv(synthesis_, "conv" + id, x);
    }
    if (noise) x = ag::add_noise(x, (*noise)[static_cast<std::size_t>(i)], synthesis_["noise" + id]);
    if (i > 0) x = ag::leaky_relu(x, kSlope);
    x = ag::instance_norm(x);
    ag::Var wi = ag::select_layer(w, i);
    ag::Var s = ag::add_scalar(nn::linear(synthesis_, "style" + id + ".scale", wi), 1.0);
    ag::Var b = nn::linear(synthesis_, "style" + id + ".shift", wi);
    x = ag::modulate(x, s, b);
  }
  return ag::tanh(nn::conv(synthesis_, "to_rgb", x));
}

StyleW GeneratorModel::map_latent(const LatentZ& z) const {
  if (z.dim() != cfg_.style_dim)
    throw ShapeError("latent has dim " + std::to_string(z.dim()) + ", model expects " + std::to_string(cfg_.style_dim));
  ag::NoGradGuard ng;
  return StyleW::from_tensor(map_to_style(ag::constant(z.as_batch())).value());
}

Image GeneratorModel::synthesize(const StyleW& w) const {
  ag::NoGradGuard ng;
  return tensor_to_image(synthesize(ag::constant(w.as_batch())).value(), 0);
}

double GeneratorModel::discriminator_score(const Image& x) const {
  ag::NoGradGuard ng;
  const Image batch[] = {x};
  return disc_.score(ag::constant(images_to_tensor(batch))).value()[0];
}

NoiseInputs GeneratorModel::sample_noise(int batch, nn::Rng& rng) const {
  NoiseInputs out;
  for (int i = 0; i < num_layers(); ++i) {
    const int r = layer_resolution(i);
    out.push_back(rng.normal_tensor({batch, 1, r, r}));
  }
  return out;
}

void GeneratorModel::set_trainable(bool on) {
  mapping_.set_trainable(on);
  synthesis_.set_trainable(on);
  disc_.params().set_trainable(on);
}

void GeneratorModel::zero_weights() {
  for (nn::ParamSet* ps : {&mapping_, &synthesis_, &disc_.params()})
    for (const auto& [_, v] : ps->items()) {
      ag::Var var = v;
      var.mutable_value().fill(0.0);
    }
}

bool GeneratorModel::equals(const GeneratorModel& other) const {
  return mapping_.equals(other.mapping_) && synthesis_.equals(other.synthesis_) &&
         disc_.params().equals(other.disc_.params());
}

Checkpoint GeneratorModel::to_checkpoint() const {
  Checkpoint ck("generator");
  ck.meta() = {{"resolution", cfg_.resolution},
               {"style_dim", cfg_.style_dim},
               {"channels", cfg_.channels},
               {"mapping_layers", cfg_.mapping_layers},
               {"disc_channels", cfg_.disc_channels},
               {"num_layers", num_layers()}};
  ck.add_params("mapping/", mapping_);
  ck.add_params("synthesis/", synthesis_);
  ck.add_params("discriminator/", disc_.params());
  return ck;
}

GeneratorModel GeneratorModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "generator") throw ParseError("expected a generator checkpoint, got '" + ck.kind() + "'");
  GeneratorConfig cfg;
  const auto& m = ck.meta();
  cfg.resolution = m.at("resolution").get<int>();
  cfg.style_dim = m.at("style_dim").get<int>();
  cfg.channels = m.at("channels").get<int>();
  cfg.mapping_layers = m.at("mapping_layers").get<int>();
  cfg.disc_channels = m.at("disc_channels").get<int>();
  GeneratorModel model(cfg, 0);
  ck.load_params("mapping/", model.mapping_);
  ck.load_params("synthesis/", model.synthesis_);
  ck.load_params("discriminator/", model.disc_.params());
  return model;
}

GanTrainResult train_generator(std::span<const Image> images, const GeneratorConfig& model_cfg,
                               const GanTrainConfig& cfg) {
  if (images.empty()) throw ConfigError("train_generator: empty dataset");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("train_generator: steps must be >= 0 and batch >= 1");
  if (!(cfg.mixing_prob >= 0.0 && cfg.mixing_prob <= 1.0)) throw ConfigError("train_generator: mixing_prob must be in [0, 1]");
  for (const auto& img : images)
    if (img.channels() != 3 || img.height() != model_cfg.resolution || img.width() != model_cfg.resolution)
      throw ConfigError("train_generator: dataset images do not match the model resolution");

  GanTrainResult result{GeneratorModel(model_cfg, cfg.seed), {}, {}, {}};
  GeneratorModel& model = result.model;
  nn::Rng rng(cfg.seed ^ 0x7a11ULL);
  nn::Adam opt_map(cfg.lr_generator * cfg.mapping_lr_scale, cfg.beta1, cfg.beta2);
  nn::Adam opt_syn(cfg.lr_generator, cfg.beta1, cfg.beta2);
  nn::Adam opt_disc(cfg.lr_discriminator, cfg.beta1, cfg.beta2);
  const int c = model_cfg.style_dim;
  const int n_images = static_cast<int>(images.size());
  const int layers = model.num_layers();
  // Styles for a fake batch; with probability mixing_prob each sample switches
  // to a second latent from a random layer onwards.
  auto fake_styles = [&]() {
    ag::Var w = model.map_to_style(ag::constant(rng.normal_tensor({cfg.batch, c})));
    if (cfg.mixing_prob <= 0.0 || layers < 2 || rng.uniform() >= cfg.mixing_prob) return w;
    ag::Var w2 = model.map_to_style(ag::constant(rng.normal_tensor({cfg.batch, c})));
    Tensor keep({cfg.batch, layers, c}), take({cfg.batch, layers, c});
    for (int n = 0; n < cfg.batch; ++n) {
      const int cross = rng.uniform_int(1, layers - 1);
      for (int i = 0; i < layers; ++i)
        for (int k = 0; k < c; ++k) {
          const std::size_t at = (static_cast<std::size_t>(n) * layers + i) * c + k;
          keep[at] = i < cross ? 1.0 : 0.0;
          take[at] = 1.0 - keep[at];
        }
    }
    return ag::add(ag::mul_const(w, keep), ag::mul_const(w2, take));
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Image> real;
    for (int b = 0; b < cfg.batch; ++b) real.push_back(images[static_cast<std::size_t>(rng.uniform_int(0, n_images - 1))]);
    const Tensor real_t = images_to_tensor(real);

    // Discriminator: softplus(D(fake)) + softplus(-D(real)) + penalty on real.
    Tensor fake_t;
    {
      ag::NoGradGuard ng;
      fake_t = model.synthesize(fake_styles()).value();
    }
    GradientPenalty gp = gradient_penalty(model.discriminator(), real_t, cfg.gp_weight);
    ag::Var d_loss = ag::add(ag::mean(ag::softplus(model.discriminate(ag::constant(fake_t)))),
                             ag::mean(ag::softplus(ag::scale(gp.scores, -1.0))));
    const double d_value = d_loss.value().item() + gp.value;
    ag::backward(ag::add(d_loss, gp.surrogate));
    opt_disc.step(model.discriminator().params());

    // Generator: non-saturating softplus(-D(G(z))).
    model.discriminator().params().set_trainable(false);
    ag::Var fake = model.synthesize(fake_styles());
    ag::Var g_loss = ag::mean(ag::softplus(ag::scale(model.discriminate(fake), -1.0)));
    const double g_value = g_loss.value().item();
    ag::backward(g_loss);
    model.discriminator().params().set_trainable(true);
    opt_syn.step(model.synthesis());
    opt_map.step(model.mapping());

    if (!std::isfinite(d_value) || !std::isfinite(g_value)) throw DivergenceError(step, "GAN loss is not finite");
    result.discriminator_loss.push_back(d_value);
    result.generator_loss.push_back(g_value);
  }
  result.checkpoint = model.to_checkpoint();
  result.checkpoint.meta()["train"] = {{"steps", cfg.steps}, {"seed", cfg.seed}, {"mixing_prob", cfg.mixing_prob}};
  result.model = GeneratorModel::from_checkpoint(result.checkpoint);
  return result;
}

}  // namespace tedi
