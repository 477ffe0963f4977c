#include <cmath>
#include <limits>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tedi/data.hpp"
#include "tedi/error.hpp"
#include "tedi/generator.hpp"

using namespace tedi;

namespace {

GeneratorConfig tiny() {
  GeneratorConfig c;
  c.style_dim = 8;
  c.channels = 4;
  c.disc_channels = 4;
  return c;
}

LatentZ random_z(int dim, std::uint64_t seed) {
  nn::Rng rng(seed);
  LatentZ z(std::vector<double>(static_cast<std::size_t>(dim)));
  for (double& v : z.values()) v = rng.normal();
  return z;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace

TEST_CASE("num_layers follows 2 log2 R - 2") {
  CHECK(num_layers(256) == 14);
  CHECK(num_layers(1024) == 18);
  CHECK(num_layers(16) == 6);
  CHECK(num_layers(32) == 8);
  int prev = 0;
  for (int r = 16; r <= (1 << 20); r *= 2) {
    const int l = num_layers(r);
    CHECK(l > prev);
    CHECK(resolution_for_layers(l) == r);
    prev = l;
  }
  for (int bad : {0, 1, 8, 12, 24, 100, -16}) CHECK_THROWS_AS(num_layers(bad), InvalidResolution);
}

TEST_CASE("map_latent broadcasts one code to every layer") {
  GeneratorModel g(tiny(), 3);
  const LatentZ z = random_z(8, 1);
  const StyleW w = g.map_latent(z);
  REQUIRE(w.num_layers() == 6);
  REQUIRE(w.dim() == 8);
  for (int i = 1; i < 6; ++i)
    for (int c = 0; c < 8; ++c) CHECK(w.row(i)[c] == w.row(0)[c]);
  CHECK(g.map_latent(z) == w);
  LatentZ z2 = z;
  z2.values()[0] += 1e-3;
  CHECK_FALSE(g.map_latent(z2) == w);
  CHECK_THROWS_AS(g.map_latent(random_z(7, 1)), ShapeError);
}

TEST_CASE("synthesize shape, range and layer locality") {
  GeneratorModel g(tiny(), 4);
  const StyleW w = g.map_latent(random_z(8, 2));
  const Image x = g.synthesize(w);
  CHECK(x.channels() == 3);
  CHECK(x.height() == 16);
  CHECK(x.width() == 16);
  for (double v : x.values()) CHECK((v >= -1.0 && v <= 1.0));

  StyleW w5 = w;
  for (double& v : w5.row(5)) v += 0.5;
  CHECK(max_abs_diff(g.synthesize(w5), x) > 1e-6);

  // Same rows set by hand give the same picture.
  StyleW manual(6, 8);
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 8; ++c) manual.row(i)[c] = w.row(i)[c];
  CHECK(max_abs_diff(g.synthesize(manual), x) == 0.0);

  // With block 3's style affines zeroed, row 3 stops mattering.
  GeneratorModel g3 = g;
  for (const char* part : {"style3.scale.weight", "style3.shift.weight"}) {
    ag::Var p = g3.synthesis()[part];
    p.mutable_value().fill(0.0);
  }
  StyleW w3 = w;
  for (double& v : w3.row(3)) v -= 2.0;
  CHECK(max_abs_diff(g3.synthesize(w3), g3.synthesize(w)) == 0.0);

  CHECK_THROWS_AS(g.synthesize(StyleW(4, 8)), ShapeError);
}

TEST_CASE("zero-weight model is degenerate") {
  GeneratorModel g(tiny(), 5);
  g.zero_weights();
  const Image x = g.synthesize(g.map_latent(random_z(8, 3)));
  for (double v : x.values()) CHECK(v == x.values()[0]);
  CHECK(g.discriminator_score(x) == 0.0);
  const auto faces = data::generate_samples(2, 16, 9);
  CHECK(g.discriminator_score(faces[1].image) == 0.0);
}

TEST_CASE("discriminator input gradient matches finite differences") {
  GeneratorModel g(tiny(), 6);
  const auto faces = data::generate_samples(2, 16, 10);
  Tensor x = images_to_tensor(std::vector<Image>{faces[0].image, faces[1].image});
  ag::Var input = ag::parameter(x);
  ag::backward(ag::sum(g.discriminate(input)));
  Tensor analytic = input.grad();
  auto f = [&]() {
    ag::NoGradGuard ng;
    return ag::sum(g.discriminate(ag::constant(x))).value().item();
  };
  CHECK(testing::finite_difference_check(f, x, analytic, 10, 1).max_rel_error < 1e-4);
  CHECK(std::isfinite(g.discriminator_score(faces[0].image)));
  CHECK_THROWS_AS(g.discriminate(ag::constant(Tensor({1, 3, 8, 8}))), ShapeError);
}

TEST_CASE("directional derivative and gradient penalty") {
  Discriminator d({16, 3, 4}, 12);
  nn::Rng rng(13);
  Tensor x = rng.normal_tensor({2, 3, 16, 16}, 0.5);
  const Tensor t = rng.normal_tensor({2, 3, 16, 16});

  // JVP against a central difference along t.
  auto [s, j] = d.score_with_tangent(ag::constant(x), t);
  const double h = 1e-6;
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += h * t[i];
    xm[i] -= h * t[i];
  }
  const Tensor sp = d.score(ag::constant(xp)).value(), sm = d.score(ag::constant(xm)).value();
  for (int n = 0; n < 2; ++n)
    CHECK(testing::relative_error(j.value()[n], (sp[n] - sm[n]) / (2 * h)) < 1e-4);

  // Penalty equals (w/2) mean ||grad||^2 with a finite-difference gradient.
  const double weight = 10.0;
  GradientPenalty gp = gradient_penalty(d, x, weight);
  double fd_total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor a = x, b = x;
    a[i] += 1e-5;
    b[i] -= 1e-5;
    const double ga = ag::sum(d.score(ag::constant(a))).value().item();
    const double gb = ag::sum(d.score(ag::constant(b))).value().item();
    const double g = (ga - gb) / 2e-5;
    fd_total += g * g;
  }
  CHECK(gp.value >= 0.0);
  CHECK(std::abs(gp.value - 0.5 * weight * fd_total / 2) <= 1e-3 * std::max(1.0, gp.value));

  // Surrogate parameter gradient vs finite differences of the penalty value.
  d.params().zero_grad();
  ag::backward(gp.surrogate);
  for (const auto& [name, var] : d.params().items()) {
    ag::Var p = var;
    Tensor analytic = p.grad();
    auto f = [&]() { return gradient_penalty(d, x, weight).value; };
    auto r = testing::finite_difference_check(f, p.mutable_value(), analytic, 4, 7);
    INFO(name);
    CHECK(r.max_rel_error < 1e-4);
  }
  CHECK_THROWS_AS(gradient_penalty(d, x, -1.0), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  GeneratorModel g(tiny(), 20);
  const Checkpoint ck = g.to_checkpoint();
  const GeneratorModel back = GeneratorModel::from_checkpoint(Checkpoint::from_bytes(ck.to_bytes()));
  CHECK(back.equals(g));
  const StyleW w = g.map_latent(random_z(8, 4));
  CHECK(max_abs_diff(back.synthesize(w), g.synthesize(w)) < 1e-6);
}

TEST_CASE("train_generator contracts") {
  const auto samples = data::generate_samples(16, 16, 21);
  std::vector<Image> images;
  for (const auto& s : samples) images.push_back(s.image);
  GanTrainConfig tc;
  tc.steps = 3;
  tc.batch = 4;
  tc.seed = 5;
  const auto a = train_generator(images, tiny(), tc);
  const auto b = train_generator(images, tiny(), tc);
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(a.generator_loss.size() == 3);
  CHECK_FALSE(a.model.equals(GeneratorModel(tiny(), tc.seed)));

  tc.steps = 0;
  const auto c = train_generator(images, tiny(), tc);
  CHECK(c.model.equals(GeneratorModel(tiny(), tc.seed)));
  CHECK(GeneratorModel::from_checkpoint(c.checkpoint).equals(GeneratorModel(tiny(), tc.seed)));

  CHECK_THROWS_AS(train_generator({}, tiny(), tc), ConfigError);
  tc.steps = 2;
  tc.lr_discriminator = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(train_generator(images, tiny(), tc), DivergenceError);
}

TEST_CASE("style mixing during training") {
  const auto samples = data::generate_samples(8, 16, 22);
  std::vector<Image> images;
  for (const auto& s : samples) images.push_back(s.image);
  GanTrainConfig tc;
  tc.steps = 3;
  tc.batch = 4;
  tc.mixing_prob = 1.0;
  const auto a = train_generator(images, tiny(), tc);
  CHECK(a.checkpoint == train_generator(images, tiny(), tc).checkpoint);
  tc.mixing_prob = 0.0;
  CHECK_FALSE(a.checkpoint == train_generator(images, tiny(), tc).checkpoint);
  CHECK(a.checkpoint.meta().at("train").at("mixing_prob") == 1.0);
  tc.mixing_prob = 1.5;
  CHECK_THROWS_AS(train_generator(images, tiny(), tc), ConfigError);
  tc.mixing_prob = -0.1;
  CHECK_THROWS_AS(train_generator(images, tiny(), tc), ConfigError);
}
