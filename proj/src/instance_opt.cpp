#include "tedi/instance_opt.hpp"

#include <cmath>
#include <sstream>

#include "tedi/error.hpp"

namespace tedi {

void OptConfig::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0)) throw ConfigError("instance optimization weights must be >= 0");
  if (steps < 0) throw ConfigError("instance optimization steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("instance optimization learning rate must be > 0");
}

namespace {

Tensor image_batch(const Image& x, const GeneratorModel& g) {
  if (x.channels() != 3 || x.height() != g.resolution() || x.width() != g.resolution())
    throw ShapeError("image does not match the generator resolution");
  return images_to_tensor(std::span<const Image>(&x, 1));
}

ObjectiveTerms assemble(const ag::Var& y, const Tensor& target, ag::Var reg, const InstanceModels& m,
                        const OptConfig& cfg) {
  ag::Var t = ag::constant(target);
  ObjectiveTerms terms;
  terms.pixel = ag::sum_squares(ag::sub(y, t));
  terms.perceptual = ag::sum(m.features.distance(y, t));
  terms.regularizer = std::move(reg);
  terms.total = ag::add(ag::add(terms.pixel, ag::scale(terms.perceptual, cfg.lambda1)),
                        ag::scale(terms.regularizer, cfg.lambda2));
  return terms;
}

}  // namespace

ObjectiveTerms instance_objective(const ag::Var& w, const Image& x, const InstanceModels& m, const OptConfig& cfg) {
  cfg.validate();
  const Tensor target = image_batch(x, m.generator);
  ag::Var y = m.generator.synthesize(w);
  ag::Var back = m.generator.map_to_style(m.encoder.encode(y));
  return assemble(y, target, ag::sum_squares(ag::sub(w, back)), m, cfg);
}

ObjectiveTerms instance_objective_z(const ag::Var& z, const Image& x, const InstanceModels& m, const OptConfig& cfg) {
  cfg.validate();
  const Tensor target = image_batch(x, m.generator);
  ag::Var y = m.generator.synthesize(m.generator.map_to_style(z));
  return assemble(y, target, ag::sum_squares(ag::sub(z, m.encoder.encode(y))), m, cfg);
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "step,total,pixel,perceptual,regularizer\n";
  for (const auto& r : trace)
    out << r.step << ',' << r.total << ',' << r.pixel << ',' << r.perceptual << ',' << r.regularizer << '\n';
  return out.str();
}

namespace {

// Shared descent loop over a flat code tensor. `frozen` marks entries that
// never move.
template <class Objective>
Tensor descend(Tensor code, const std::vector<bool>& frozen, const Objective& objective, const OptConfig& cfg,
               OptResult& result) {
  Tensor best = code;
  for (int step = 0; step <= cfg.steps; ++step) {
    ag::Var v = ag::parameter(code);
    ObjectiveTerms terms = objective(v);
    const double total = terms.total.value().item();
    if (!std::isfinite(total)) throw DivergenceError(step, "instance objective is not finite");
    result.trace.push_back({step, total, terms.pixel.value().item(), terms.perceptual.value().item(),
                            terms.regularizer.value().item()});
    if (step == 0) result.initial_objective = total;
    if (step == 0 || total < result.objective) {
      result.objective = total;
      result.best_step = step;
      best = code;
    }
    if (step == cfg.steps) break;
    const std::vector<ag::Var> targets{v};
    ag::backward(terms.total, targets);
    const Tensor& g = v.grad();
    for (std::size_t i = 0; i < code.size(); ++i)
      if (!frozen[i]) code[i] -= cfg.lr * g[i];
  }
  return best;
}

}  // namespace

OptResult optimize_instance(const Image& x, const StyleW& init, const InstanceModels& m, const OptConfig& cfg) {
  cfg.validate();
  const int layers = m.generator.num_layers(), c = m.generator.style_dim();
  if (init.num_layers() != layers || init.dim() != c) throw ShapeError("initial code does not match the generator");
  if (!init.all_finite()) throw ConfigError("initial code has non-finite entries");
  cfg.frozen.validate(layers);
  std::vector<bool> frozen(static_cast<std::size_t>(layers) * c, false);
  for (int l : cfg.frozen.indices()) std::fill_n(frozen.begin() + static_cast<std::ptrdiff_t>(l) * c, c, true);
  OptResult result;
  const Tensor best = descend(
      init.as_batch(), frozen, [&](const ag::Var& w) { return instance_objective(w, x, m, cfg); }, cfg, result);
  result.code = StyleW::from_tensor(best);
  // Frozen rows come back bitwise as given.
  for (int l : cfg.frozen.indices())
    for (int k = 0; k < c; ++k) result.code.row(l)[k] = init.row(l)[k];
  return result;
}

OptResult optimize_instance(const Image& x, const LatentZ& init, const InstanceModels& m, const OptConfig& cfg) {
  cfg.validate();
  if (init.dim() != m.generator.style_dim()) throw ShapeError("initial latent does not match the generator");
  if (!cfg.frozen.empty()) throw ConfigError("layer freezing needs a W-space code");
  std::vector<bool> frozen(static_cast<std::size_t>(init.dim()), false);
  OptResult result;
  const Tensor best = descend(
      init.as_batch(), frozen, [&](const ag::Var& z) { return instance_objective_z(z, x, m, cfg); }, cfg, result);
  result.latent = LatentZ::from_batch(best, 0);
  result.code = m.generator.map_latent(result.latent);
  return result;
}

}  // namespace tedi
