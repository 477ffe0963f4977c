#include <cmath>
#include <limits>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tedi/error.hpp"
#include "tedi/instance_opt.hpp"

using namespace tedi;

namespace {

struct Toy {
  GeneratorModel g;
  EncoderModel e;
  FeatureExtractor f{3, 3, {4, 4, 4, 4}};
  Toy() {
    GeneratorConfig gc;
    gc.style_dim = 6;
    gc.channels = 4;
    gc.disc_channels = 2;
    gc.mapping_layers = 2;
    g = GeneratorModel(gc, 1);
    EncoderConfig ec;
    ec.style_dim = 6;
    ec.channels = 3;
    ec.hidden = 6;
    e = EncoderModel(ec, 2);
    g.set_trainable(false);
    e.params().set_trainable(false);
  }
  InstanceModels models() const { return {g, e, f}; }
};

Image face(std::uint64_t seed) { return data::generate_samples(1, 16, seed)[0].image; }

}  // namespace

TEST_CASE("objective components") {
  Toy t;
  const Image x = face(3);
  const StyleW w = t.g.map_latent(t.e.encode_image(x));
  OptConfig cfg;
  ag::NoGradGuard ng;
  auto terms = instance_objective(ag::constant(w.as_batch()), x, t.models(), cfg);
  CHECK(terms.pixel.value().item() > 0.0);
  CHECK(terms.perceptual.value().item() > 0.0);
  CHECK(terms.regularizer.value().item() >= 0.0);
  CHECK(terms.total.value().item() ==
        doctest::Approx(terms.pixel.value().item() + 5e-2 * terms.perceptual.value().item() +
                        2.0 * terms.regularizer.value().item())
            .epsilon(1e-12));
  OptConfig plain;
  plain.lambda1 = plain.lambda2 = 0.0;
  auto p = instance_objective(ag::constant(w.as_batch()), x, t.models(), plain);
  CHECK(p.total.value().item() == p.pixel.value().item());
  OptConfig bad;
  bad.lambda2 = -1.0;
  CHECK_THROWS_AS(instance_objective(ag::constant(w.as_batch()), x, t.models(), bad), ConfigError);
  CHECK_THROWS_AS(instance_objective(ag::constant(w.as_batch()), Image(3, 8, 8), t.models(), cfg), ShapeError);
}

TEST_CASE("objective gradients in W and Z") {
  Toy t;
  const Image x = face(4);
  OptConfig cfg;
  nn::Rng rng(5);
  ag::Var w = ag::parameter(rng.normal_tensor({1, 6, 6}));
  ag::backward(instance_objective(w, x, t.models(), cfg).total);
  auto fw = [&]() {
    ag::NoGradGuard ng;
    return instance_objective(w, x, t.models(), cfg).total.value().item();
  };
  CHECK(testing::finite_difference_check(fw, w.mutable_value(), w.grad(), 20, 1).max_rel_error < 1e-4);

  ag::Var z = ag::parameter(rng.normal_tensor({1, 6}));
  ag::backward(instance_objective_z(z, x, t.models(), cfg).total);
  auto fz = [&]() {
    ag::NoGradGuard ng;
    return instance_objective_z(z, x, t.models(), cfg).total.value().item();
  };
  CHECK(testing::finite_difference_check(fz, z.mutable_value(), z.grad(), 6, 2).max_rel_error < 1e-4);
}

TEST_CASE("fixed point has zero objective") {
  Toy t;
  // Encoder collapsed to a constant z0: f(E(anything)) = f(z0).
  nn::Rng rng(6);
  const Tensor z0 = rng.normal_tensor({6});
  for (const auto& [name, var] : t.e.params().items()) {
    ag::Var v = var;
    if (name == "fc1.bias") v.mutable_value() = z0;
    else v.mutable_value().fill(0.0);
  }
  const StyleW w0 = t.g.map_latent(LatentZ(std::vector<double>(z0.values().begin(), z0.values().end())));
  const Image x = t.g.synthesize(w0);
  OptConfig cfg;
  {
    ag::NoGradGuard ng;
    CHECK(instance_objective(ag::constant(w0.as_batch()), x, t.models(), cfg).total.value().item() == doctest::Approx(0.0));
  }
  cfg.steps = 5;
  auto r = optimize_instance(x, w0, t.models(), cfg);
  CHECK(r.code == w0);
  CHECK(r.best_step == 0);
}

TEST_CASE("descent contracts") {
  Toy t;
  for (int k = 0; k < 4; ++k) {
    const Image x = face(10 + static_cast<std::uint64_t>(k));
    const StyleW init = t.g.map_latent(t.e.encode_image(face(20 + static_cast<std::uint64_t>(k))));
    OptConfig cfg;
    cfg.steps = 15;
    cfg.lr = k == 3 ? 10.0 : 1e-2;  // one run with a step size far too large
    cfg.frozen = LayerMask{1, 4};
    auto r = optimize_instance(x, init, t.models(), cfg);
    CHECK(r.objective <= r.initial_objective);
    CHECK(r.trace.size() == 16);
    for (int l : {1, 4})
      for (int c = 0; c < 6; ++c) CHECK(r.code.row(l)[c] == init.row(l)[c]);
    for (const auto& row : r.trace) {
      CHECK(row.pixel >= 0.0);
      CHECK(row.perceptual >= 0.0);
      CHECK(row.regularizer >= 0.0);
    }
    if (k == 0) CHECK_FALSE(r.code == init);
  }
  OptConfig none;
  none.steps = 0;
  const Image x = face(30);
  const StyleW init = t.g.map_latent(t.e.encode_image(face(31)));
  CHECK(optimize_instance(x, init, t.models(), none).code == init);

  const LatentZ z = t.e.encode_image(x);
  auto rz = optimize_instance(x, z, t.models(), OptConfig{});
  CHECK(rz.objective <= rz.initial_objective);
  CHECK(rz.code == t.g.map_latent(rz.latent));
  OptConfig zeroed;
  zeroed.steps = 0;
  CHECK(optimize_instance(x, z, t.models(), zeroed).latent == z);

  OptConfig frozen_z;
  frozen_z.frozen = LayerMask{0};
  CHECK_THROWS_AS(optimize_instance(x, z, t.models(), frozen_z), ConfigError);
  OptConfig out_of_range;
  out_of_range.frozen = LayerMask{6};
  CHECK_THROWS_AS(optimize_instance(x, init, t.models(), out_of_range), ShapeError);

  Image broken = x;
  broken.at(0, 0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    optimize_instance(broken, init, t.models(), OptConfig{});
    FAIL("expected divergence");
  } catch (const DivergenceError& err) {
    CHECK(err.step() == 0);
  }
}

TEST_CASE("trace csv") {
  const std::vector<TraceRow> rows{{0, 3.0, 2.0, 1.0, 0.5}, {1, 2.5, 1.5, 1.0, 0.5}};
  const std::string csv = trace_csv(rows);
  CHECK(csv.starts_with("step,total,pixel,perceptual,regularizer\n0,3,2,1,0.5\n"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
