#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tedi/error.hpp"
#include "tedi/vls.hpp"

using namespace tedi;

namespace {

StyleW random_w(int l, int c, nn::Rng& rng) {
  StyleW w(l, c);
  for (int i = 0; i < l; ++i)
    for (double& v : w.row(i)) v = rng.normal();
  return w;
}

// Direct elementwise evaluation of ||sum_i p_i (a_i - b_i)||^2.
double printed_oracle(const StyleW& a, const StyleW& b, const std::vector<double>& p) {
  double total = 0.0;
  for (int c = 0; c < a.dim(); ++c) {
    double s = 0.0;
    for (int i = 0; i < a.num_layers(); ++i) s += p[static_cast<std::size_t>(i)] * (a.row(i)[c] - b.row(i)[c]);
    total += s * s;
  }
  return total;
}

double per_layer_oracle(const StyleW& a, const StyleW& b, const std::vector<double>& p) {
  double total = 0.0;
  for (int i = 0; i < a.num_layers(); ++i)
    for (int c = 0; c < a.dim(); ++c) {
      const double d = a.row(i)[c] - b.row(i)[c];
      total += p[static_cast<std::size_t>(i)] * d * d;
    }
  return total;
}

std::vector<double> random_p(int l, nn::Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(l));
  for (double& v : p) v = rng.uniform(0.0, 1.0);
  return p;
}

}  // namespace

TEST_CASE("tokenizer and vocabulary") {
  CHECK(tokenize("A smiling, young WOMAN!") == std::vector<std::string>{"a", "smiling", "young", "woman"});
  const std::string texts[] = {"a smiling young woman", "he has black hair"};
  const Vocabulary v = Vocabulary::build(texts);
  CHECK(v.size() == 9);
  CHECK(v.token(0) == Vocabulary::kUnknown);
  CHECK(v.id("zebra") == 0);
  const Caption c = v.encode("A smiling zebra");
  CHECK(c.ids == std::vector<int>{v.id("a"), v.id("smiling"), 0});
  CHECK(Vocabulary::from_text(v.to_text()).to_text() == v.to_text());
  CHECK(Vocabulary::from_text(v.to_text()).hash() == v.hash());
  CHECK_THROWS_AS(v.encode("  ,. "), TokenizationError);
  std::string long_text;
  for (int i = 0; i < 33; ++i) long_text += "hair ";
  CHECK_THROWS_AS(v.encode(long_text), TokenizationError);
  CHECK_THROWS_AS(v.validate(Caption{{1, 99}}), TokenizationError);
  CHECK_THROWS_AS(Vocabulary::from_text("hair\n"), ParseError);
}

TEST_CASE("text encoder shape and determinism") {
  const std::string texts[] = {"a smiling young woman with short blonde hair"};
  TextEncoderModel m(Vocabulary::build(texts), TextEncoderConfig{}, 3);
  const LatentZ z = m.encode_text("a smiling young woman");
  CHECK(z.dim() == 64);
  CHECK(m.encode_text("a smiling young woman") == z);
  CHECK_FALSE(m.encode_text("a young woman") == z);
  CHECK_THROWS_AS(m.encode_text(Caption{{1000}}), TokenizationError);
  // Batched encoding of ragged captions matches one-at-a-time encoding.
  const Caption a = m.vocab().encode("a smiling young woman"), b = m.vocab().encode("short hair");
  const Caption both[] = {a, b};
  ag::NoGradGuard ng;
  const Tensor batch = m.encode(both).value();
  const LatentZ zb = m.encode_text(b);
  for (int c = 0; c < 64; ++c) {
    CHECK(batch[static_cast<std::size_t>(c)] == doctest::Approx(z.values()[c]).epsilon(1e-12));
    CHECK(batch[static_cast<std::size_t>(64 + c)] == doctest::Approx(zb.values()[c]).epsilon(1e-12));
  }
}

TEST_CASE("vls_loss matches a summation oracle") {
  nn::Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int l = 2 * rng.uniform_int(1, 5), c = rng.uniform_int(1, 9);
    const StyleW a = random_w(l, c, rng), b = random_w(l, c, rng);
    const LayerWeights p{random_p(l, rng)};
    worst = std::max(worst, std::abs(vls_loss(a, b, p) - printed_oracle(a, b, p.p)));
    worst = std::max(worst, std::abs(vls_loss(a, b, p, VlsVariant::per_layer) - per_layer_oracle(a, b, p.p)));
    CHECK(vls_loss(a, b, p) == vls_loss(b, a, p));
    CHECK(vls_loss(a, a, p) == 0.0);
    LayerWeights p3{p.p};
    for (double& v : p3.p) v *= 3.0;
    CHECK(vls_loss(a, b, p3) == doctest::Approx(9.0 * vls_loss(a, b, p)).epsilon(1e-10));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("cross-layer cancellation") {
  StyleW a(2, 1), b(2, 1);
  a.row(0)[0] = 1.0;
  a.row(1)[0] = -1.0;
  const LayerWeights p{{1.0, 1.0}};
  CHECK(vls_loss(a, b, p) == 0.0);
  CHECK(vls_loss(a, b, p, VlsVariant::per_layer) == 2.0);
  CHECK_FALSE(a == b);
  CHECK_THROWS_AS(vls_loss(a, StyleW(4, 1), p), ShapeError);
  CHECK_THROWS_AS(vls_loss(a, b, LayerWeights{{1.0}}), ShapeError);
  CHECK_THROWS_AS(vls_loss(a, b, LayerWeights{{0.0, 0.0}}), ConfigError);
  CHECK_THROWS_AS(vls_loss(a, b, LayerWeights{{-1.0, 1.0}}), ConfigError);
}

TEST_CASE("ranking loss values") {
  const LayerWeights p = LayerWeights::uniform(2);
  // Identical embeddings: every one of the 2 * N(N-1) hinges equals the margin.
  std::vector<StyleW> same(2, StyleW(2, 3, 0.5));
  CHECK(ranking_loss(same, same, 0.2, p) == doctest::Approx(2 * 0.2));

  // Matched at distance 0, mismatched far apart.
  std::vector<StyleW> img, txt;
  for (int i = 0; i < 3; ++i) {
    StyleW w(2, 3);
    w.row(0)[static_cast<std::size_t>(i)] = 4.0;
    w.row(1)[static_cast<std::size_t>(i)] = 4.0;
    img.push_back(w);
    txt.push_back(w);
  }
  CHECK(ranking_loss(img, txt, 0.2, p) == 0.0);
  CHECK_THROWS_AS(ranking_loss(std::span(img).first(1), std::span(txt).first(1), 0.2, p), ConfigError);
  CHECK_THROWS_AS(ranking_loss(img, txt, 0.0, p), ConfigError);

  // Brute-force hinge oracle on random codes.
  nn::Rng rng(2);
  std::vector<StyleW> a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back(random_w(2, 3, rng));
    b.push_back(random_w(2, 3, rng));
  }
  double expect = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      if (i == j) continue;
      const double dii = printed_oracle(a[i], b[i], p.p);
      expect += std::max(0.0, 3.0 + dii - printed_oracle(a[j], b[i], p.p));
      expect += std::max(0.0, 3.0 + dii - printed_oracle(a[i], b[j], p.p));
    }
  CHECK(ranking_loss(a, b, 3.0, p) == doctest::Approx(expect / 20.0).epsilon(1e-12));
  CHECK(ranking_loss(a, b, 3.0, p) >= 0.0);
}

TEST_CASE("alignment gradients") {
  nn::Rng rng(4);
  Tensor wv = rng.normal_tensor({4, 6, 5}), wl = rng.normal_tensor({4, 6, 5});
  const LayerWeights p{random_p(6, rng)};
  for (VlsVariant variant : {VlsVariant::printed, VlsVariant::per_layer}) {
    ag::Var a = ag::parameter(wv), b = ag::parameter(wl);
    auto build = [&]() {
      return ag::add(ag::mean(vls_distance(a, b, p, variant)), ranking_loss(a, b, 1.5, p, variant));
    };
    ag::backward(build());
    auto f = [&]() {
      ag::NoGradGuard ng;
      return build().value().item();
    };
    CHECK(testing::finite_difference_check(f, a.mutable_value(), a.grad(), 40, 1).max_rel_error < 1e-4);
    CHECK(testing::finite_difference_check(f, b.mutable_value(), b.grad(), 40, 2).max_rel_error < 1e-4);
  }

  // Through the recurrent text encoder and the mapping network.
  const auto samples = data::generate_samples(4, 16, 5);
  std::vector<std::string> texts;
  std::vector<Caption> caps;
  for (const auto& s : samples) texts.push_back(s.captions[3]);
  TextEncoderConfig tc{6, 5, 8};
  TextEncoderModel m(Vocabulary::build(texts), tc, 6);
  for (const auto& t : texts) caps.push_back(m.vocab().encode(t));
  GeneratorConfig gc;
  gc.style_dim = 8;
  gc.channels = 2;
  gc.disc_channels = 2;
  GeneratorModel g(gc, 7);
  g.set_trainable(false);
  const Tensor target = rng.normal_tensor({4, 6, 8});
  const LayerWeights up = LayerWeights::uniform(6);
  auto loss = [&]() {
    ag::Var wl2 = ag::repeat_layers(g.map(m.encode(caps)), 6);
    ag::Var w = ag::constant(target);
    return ag::add(ag::mean(vls_distance(w, wl2, up)), ranking_loss(w, wl2, 0.2, up));
  };
  ag::backward(loss());
  double worst = 0.0;
  unsigned k = 0;
  for (const auto& [name, var] : m.params().items()) {
    ag::Var pv = var;
    auto f = [&]() {
      ag::NoGradGuard ng;
      return loss().value().item();
    };
    worst = std::max(worst, testing::finite_difference_check(f, pv.mutable_value(), pv.grad(), 4, 10 + k++).max_rel_error);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("retrieval ranking") {
  nn::Rng rng(8);
  const Tensor gallery = rng.normal_tensor({9, 6, 4});
  const Tensor query = rng.normal_tensor({1, 6, 4});
  const LayerWeights p = LayerWeights::uniform(6);
  const auto order = rank_by_distance(query, gallery, 9, p);
  std::vector<std::pair<double, int>> brute;
  for (int i = 0; i < 9; ++i) {
    StyleW a = StyleW::from_tensor(gallery, i), q = StyleW::from_tensor(query, 0);
    brute.emplace_back(printed_oracle(a, q, p.p), i);
  }
  std::sort(brute.begin(), brute.end());
  for (int i = 0; i < 9; ++i) CHECK(order[static_cast<std::size_t>(i)] == brute[static_cast<std::size_t>(i)].second);
  CHECK(rank_by_distance(query, gallery, 0, p).empty());
  CHECK_THROWS_AS(rank_by_distance(query, gallery, 10, p), ConfigError);

  // Duplicated gallery entry ties and keeps index order.
  Tensor dup({3, 6, 4});
  for (std::size_t i = 0; i < 24; ++i) {
    dup[i] = query[i] + 5.0;
    dup[24 + i] = query[i];
    dup[48 + i] = query[i];
  }
  CHECK(rank_by_distance(query, dup, 3, p) == std::vector<int>{1, 2, 0});

  // End-to-end with real models.
  const auto samples = data::generate_samples(3, 16, 9);
  std::vector<std::string> texts{samples[0].captions[0]};
  GeneratorConfig gc;
  gc.style_dim = 8;
  gc.channels = 2;
  GeneratorModel g(gc, 10);
  EncoderConfig ec;
  ec.style_dim = 8;
  ec.channels = 2;
  ec.hidden = 4;
  EncoderModel e(ec, 11);
  TextEncoderModel t(Vocabulary::build(texts), TextEncoderConfig{4, 4, 8}, 12);
  std::vector<Image> gal{samples[1].image, samples[0].image, samples[0].image};
  const auto r = retrieve(t.vocab().encode(texts[0]), gal, 3, t, e, g);
  CHECK(r.size() == 3);
  const auto pos1 = std::find(r.begin(), r.end(), 1) - r.begin();
  CHECK(r[static_cast<std::size_t>(pos1 + 1)] == 2);
  CHECK(retrieve(t.vocab().encode(texts[0]), gal, 0, t, e, g).empty());
  CHECK_THROWS_AS(retrieve(t.vocab().encode(texts[0]), {}, 0, t, e, g), ConfigError);
}

TEST_CASE("text encoder training contracts") {
  const auto samples = data::generate_samples(12, 16, 13);
  GeneratorConfig gc;
  gc.style_dim = 8;
  gc.channels = 2;
  gc.disc_channels = 2;
  GeneratorModel g(gc, 14);
  EncoderConfig ec;
  ec.style_dim = 8;
  ec.channels = 2;
  ec.hidden = 4;
  EncoderModel e(ec, 15);
  const EncoderModel e_before = e;
  const GeneratorModel g_before = g;
  TextTrainConfig cfg;
  cfg.model = {8, 8, 8};
  cfg.batch = 4;
  cfg.steps = 0;
  auto none = train_text_encoder(samples, e, g, cfg);
  CHECK(none.model.equals(TextEncoderModel(none.model.vocab(), {8, 8, 8}, cfg.seed)));

  cfg.steps = 20;
  auto a = train_text_encoder(samples, e, g, cfg);
  auto b = train_text_encoder(samples, e, g, cfg);
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(a.loss.size() == 20);
  CHECK(e.equals(e_before));
  CHECK(g.equals(g_before));
  const auto back = TextEncoderModel::from_checkpoint(Checkpoint::from_bytes(a.checkpoint.to_bytes()),
                                                      Vocabulary::from_text(a.model.vocab().to_text()));
  CHECK(back.equals(a.model));
  const std::string other[] = {"unrelated words"};
  CHECK_THROWS_AS(TextEncoderModel::from_checkpoint(a.checkpoint, Vocabulary::build(other)), ParseError);
}
