#include "tedi/vls.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "tedi/error.hpp"

namespace tedi {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  tokens_.push_back(kUnknown);
  ids_[kUnknown] = 0;
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> all;
  for (const auto& t : texts)
    for (auto& tok : tokenize(t)) all.insert(std::move(tok));
  Vocabulary v;
  for (const auto& tok : all) {
    v.ids_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || v.ids_.count(line)) throw ParseError("vocabulary line " + std::to_string(lineno) + ": empty or duplicate token");
    v.ids_[line] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(line);
  }
  if (v.tokens_.empty() || v.tokens_[0] != kUnknown) throw ParseError("vocabulary must start with " + std::string(kUnknown));
  return v;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

std::string Vocabulary::hash() const { return sha256_hex(to_text()); }

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? 0 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw TokenizationError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

Caption Vocabulary::encode(std::string_view text) const {
  Caption c;
  for (const auto& tok : tokenize(text)) c.ids.push_back(id(tok));
  validate(c);
  return c;
}

void Vocabulary::validate(const Caption& c) const {
  if (c.ids.empty()) throw TokenizationError("caption has no tokens");
  if (static_cast<int>(c.ids.size()) > kMaxCaptionTokens)
    throw TokenizationError("caption has " + std::to_string(c.ids.size()) + " tokens, limit is " +
                            std::to_string(kMaxCaptionTokens));
  for (int id : c.ids)
    if (id < 0 || id >= size())
      throw TokenizationError("token id " + std::to_string(id) + " is outside the vocabulary of size " + std::to_string(size()));
}

TextEncoderModel::TextEncoderModel(Vocabulary vocab, const TextEncoderConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  nn::Rng rng(seed);
  params_.add("embed", rng.normal_tensor({vocab_.size(), cfg.embed_dim}));
  for (const char* gate : {"r", "z", "n"}) {
    nn::add_linear(params_, std::string("gru.x") + gate, cfg.embed_dim, cfg.hidden, rng, 1.0);
    nn::add_linear(params_, std::string("gru.h") + gate, cfg.hidden, cfg.hidden, rng, 1.0);
  }
  nn::add_linear(params_, "proj", cfg.hidden, cfg.style_dim, rng, 1.0);
}

ag::Var TextEncoderModel::encode(std::span<const Caption> captions) const {
  if (captions.empty()) throw ConfigError("no captions to encode");
  const int n = static_cast<int>(captions.size()), h = cfg_.hidden;
  std::size_t steps = 0;
  for (const auto& c : captions) {
    vocab_.validate(c);
    steps = std::max(steps, c.ids.size());
  }
  ag::Var state = ag::constant(Tensor({n, h}, 0.0));
  ag::Var pooled;
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<int> ids(static_cast<std::size_t>(n), 0);
    Tensor mask({n, h}, 0.0);
    for (int i = 0; i < n; ++i) {
      const auto& c = captions[static_cast<std::size_t>(i)].ids;
      if (t < c.size()) {
        ids[static_cast<std::size_t>(i)] = c[t];
        std::fill_n(mask.ptr() + static_cast<std::size_t>(i) * h, h, 1.0);
      }
    }
    ag::Var x = ag::gather_rows(params_["embed"], ids);
    ag::Var r = ag::sigmoid(ag::add(nn::linear(params_, "gru.xr", x), nn::linear(params_, "gru.hr", state)));
    ag::Var z = ag::sigmoid(ag::add(nn::linear(params_, "gru.xz", x), nn::linear(params_, "gru.hz", state)));
    ag::Var cand = ag::tanh(ag::add(nn::linear(params_, "gru.xn", x), ag::mul(r, nn::linear(params_, "gru.hn", state))));
    ag::Var next = ag::add(cand, ag::mul(z, ag::sub(state, cand)));
    // Finished sequences keep their state.
    state = ag::add(state, ag::mul_const(ag::sub(next, state), mask));
    ag::Var contrib = ag::mul_const(state, mask);
    pooled = t == 0 ? contrib : ag::add(pooled, contrib);
  }
  Tensor inv_len({n, h});
  for (int i = 0; i < n; ++i)
    std::fill_n(inv_len.ptr() + static_cast<std::size_t>(i) * h, h,
                1.0 / static_cast<double>(captions[static_cast<std::size_t>(i)].ids.size()));
  return nn::linear(params_, "proj", ag::mul_const(pooled, inv_len));
}

LatentZ TextEncoderModel::encode_text(const Caption& caption) const {
  ag::NoGradGuard ng;
  return LatentZ::from_batch(encode(std::span<const Caption>(&caption, 1)).value(), 0);
}

Checkpoint TextEncoderModel::to_checkpoint() const {
  Checkpoint ck("text_encoder");
  ck.meta() = {{"vocab_size", vocab_.size()},
               {"vocab_hash", vocab_.hash()},
               {"embed_dim", cfg_.embed_dim},
               {"hidden", cfg_.hidden},
               {"style_dim", cfg_.style_dim}};
  ck.add_params("text/", params_);
  return ck;
}

TextEncoderModel TextEncoderModel::from_checkpoint(const Checkpoint& ck, const Vocabulary& vocab) {
  if (ck.kind() != "text_encoder") throw ParseError("expected a text_encoder checkpoint, got '" + ck.kind() + "'");
  const auto& m = ck.meta();
  if (m.at("vocab_hash").get<std::string>() != vocab.hash())
    throw ParseError("vocabulary does not match the hash recorded in the text encoder checkpoint");
  TextEncoderConfig cfg;
  cfg.embed_dim = m.at("embed_dim").get<int>();
  cfg.hidden = m.at("hidden").get<int>();
  cfg.style_dim = m.at("style_dim").get<int>();
  TextEncoderModel model(vocab, cfg, 0);
  ck.load_params("text/", model.params_);
  return model;
}

LayerWeights LayerWeights::uniform(int num_layers) {
  return LayerWeights{std::vector<double>(static_cast<std::size_t>(num_layers), 1.0 / num_layers)};
}

void LayerWeights::validate(int num_layers) const {
  if (static_cast<int>(p.size()) != num_layers)
    throw ShapeError("layer weights have length " + std::to_string(p.size()) + ", expected " + std::to_string(num_layers));
  bool any = false;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("layer weights must be finite and >= 0");
    any = any || v > 0.0;
  }
  if (!any) throw ConfigError("layer weights must not all be zero");
}

namespace {

void check_codes(const ag::Var& w, const char* what) {
  if (w.value().rank() != 3) throw ShapeError(std::string(what) + " must be (N, L, C), got " + shape_str(w.shape()));
}

const LayerWeights& resolve(const LayerWeights& p, int layers, LayerWeights& storage) {
  if (p.p.empty()) {
    storage = LayerWeights::uniform(layers);
    return storage;
  }
  p.validate(layers);
  return p;
}

// Scales layer i of an (N, L, C) code by sqrt(p_i).
ag::Var sqrt_weighted(const ag::Var& w, const LayerWeights& p) {
  const int n = w.dim(0), l = w.dim(1), c = w.dim(2);
  Tensor s(w.shape());
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < l; ++k)
      std::fill_n(s.ptr() + (static_cast<std::size_t>(i) * l + k) * c, c, std::sqrt(p.p[static_cast<std::size_t>(k)]));
  return ag::mul_const(w, s);
}

}  // namespace

ag::Var vls_distance(const ag::Var& w_v, const ag::Var& w_l, const LayerWeights& p, VlsVariant variant) {
  check_codes(w_v, "visual code");
  check_codes(w_l, "linguistic code");
  if (w_v.shape() != w_l.shape())
    throw ShapeError("code shapes differ: " + shape_str(w_v.shape()) + " vs " + shape_str(w_l.shape()));
  LayerWeights storage;
  const LayerWeights& pw = resolve(p, w_v.dim(1), storage);
  ag::Var diff = ag::sub(w_v, w_l);
  if (variant == VlsVariant::printed) return ag::sum_squares_per_sample(ag::weighted_layer_sum(diff, pw.p));
  return ag::sum_squares_per_sample(sqrt_weighted(diff, pw));
}

double vls_loss(const StyleW& w_v, const StyleW& w_l, const LayerWeights& p, VlsVariant variant) {
  if (w_v.num_layers() != w_l.num_layers() || w_v.dim() != w_l.dim()) throw ShapeError("style code shapes differ");
  p.validate(w_v.num_layers());
  ag::NoGradGuard ng;
  return vls_distance(ag::constant(w_v.as_batch()), ag::constant(w_l.as_batch()), p, variant).value()[0];
}

ag::Var vls_pairwise(const ag::Var& w_v, const ag::Var& w_l, const LayerWeights& p, VlsVariant variant) {
  check_codes(w_v, "visual code");
  check_codes(w_l, "linguistic code");
  if (w_v.dim(1) != w_l.dim(1) || w_v.dim(2) != w_l.dim(2)) throw ShapeError("code shapes differ");
  LayerWeights storage;
  const LayerWeights& pw = resolve(p, w_v.dim(1), storage);
  if (variant == VlsVariant::printed)
    return ag::pairwise_sq_dist(ag::weighted_layer_sum(w_v, pw.p), ag::weighted_layer_sum(w_l, pw.p));
  const int lc = w_v.dim(1) * w_v.dim(2);
  return ag::pairwise_sq_dist(ag::reshape(sqrt_weighted(w_v, pw), {w_v.dim(0), lc}),
                              ag::reshape(sqrt_weighted(w_l, pw), {w_l.dim(0), lc}));
}

ag::Var ranking_loss(const ag::Var& image_w, const ag::Var& text_w, double margin, const LayerWeights& p,
                     VlsVariant variant) {
  check_codes(image_w, "image codes");
  check_codes(text_w, "text codes");
  if (image_w.dim(0) != text_w.dim(0)) throw ConfigError("ranking_loss: batch sizes differ");
  if (image_w.dim(0) < 2) throw ConfigError("ranking_loss: batch must hold at least 2 pairs");
  if (!(margin > 0.0)) throw ConfigError("ranking_loss: margin must be > 0");
  return ag::bidirectional_hinge(vls_pairwise(image_w, text_w, p, variant), margin);
}

namespace {
Tensor stack_codes(std::span<const StyleW> ws) {
  if (ws.empty()) throw ConfigError("empty code batch");
  const int l = ws[0].num_layers(), c = ws[0].dim();
  Tensor out({static_cast<int>(ws.size()), l, c});
  for (std::size_t i = 0; i < ws.size(); ++i) {
    if (ws[i].num_layers() != l || ws[i].dim() != c) throw ShapeError("style codes in a batch differ in shape");
    std::copy(ws[i].values().begin(), ws[i].values().end(), out.ptr() + i * static_cast<std::size_t>(l) * c);
  }
  return out;
}
}  // namespace

double ranking_loss(std::span<const StyleW> image_w, std::span<const StyleW> text_w, double margin,
                    const LayerWeights& p, VlsVariant variant) {
  if (image_w.size() < 2 || text_w.size() != image_w.size())
    throw ConfigError("ranking_loss: need two equal batches of at least 2 pairs");
  ag::NoGradGuard ng;
  return ranking_loss(ag::constant(stack_codes(image_w)), ag::constant(stack_codes(text_w)), margin, p, variant)
      .value()
      .item();
}

Tensor image_codes(const EncoderModel& encoder, const GeneratorModel& generator, std::span<const Image> images) {
  ag::NoGradGuard ng;
  return generator.map_to_style(encoder.encode(ag::constant(images_to_tensor(images)))).value();
}

Tensor text_codes(const TextEncoderModel& text, const GeneratorModel& generator, std::span<const Caption> captions) {
  ag::NoGradGuard ng;
  return generator.map_to_style(text.encode(captions)).value();
}

std::vector<int> rank_by_distance(const Tensor& query_code, const Tensor& gallery_codes, int k, const LayerWeights& p,
                                  VlsVariant variant) {
  if (gallery_codes.rank() != 3 || gallery_codes.dim(0) == 0) throw ConfigError("retrieve: empty gallery");
  const int n = gallery_codes.dim(0);
  if (k < 0 || k > n) throw ConfigError("retrieve: k must be in [0, " + std::to_string(n) + "]");
  ag::NoGradGuard ng;
  const Tensor d = vls_pairwise(ag::constant(gallery_codes), ag::constant(query_code), p, variant).value();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

std::vector<int> retrieve(const Caption& query, std::span<const Image> gallery, int k, const TextEncoderModel& text,
                          const EncoderModel& image_encoder, const GeneratorModel& generator, const LayerWeights& p,
                          VlsVariant variant) {
  if (gallery.empty()) throw ConfigError("retrieve: empty gallery");
  if (k < 0 || k > static_cast<int>(gallery.size())) throw ConfigError("retrieve: k out of range");
  if (k == 0) return {};
  return rank_by_distance(text_codes(text, generator, std::span<const Caption>(&query, 1)),
                          image_codes(image_encoder, generator, gallery), k, p, variant);
}

TextTrainResult train_text_encoder(std::span<const data::DatasetSample> dataset, const EncoderModel& image_encoder,
                                   const GeneratorModel& generator, const TextTrainConfig& cfg) {
  if (dataset.size() < 2) throw ConfigError("train_text_encoder: need at least 2 samples");
  if (cfg.steps < 0 || cfg.batch < 2) throw ConfigError("train_text_encoder: steps must be >= 0 and batch >= 2");
  if (image_encoder.config().style_dim != generator.style_dim())
    throw ConfigError("train_text_encoder: image encoder and generator disagree on the style dimension");
  const int layers = generator.num_layers();
  LayerWeights p = cfg.layer_weights.empty() ? LayerWeights::uniform(layers) : LayerWeights{cfg.layer_weights};
  p.validate(layers);

  std::vector<std::string> texts;
  std::vector<Image> images;
  for (const auto& s : dataset) {
    texts.insert(texts.end(), s.captions.begin(), s.captions.end());
    images.push_back(s.image);
  }
  const Vocabulary vocab = Vocabulary::build(texts);
  std::vector<std::array<Caption, data::kCaptionsPerImage>> captions(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    for (int k = 0; k < data::kCaptionsPerImage; ++k) captions[i][static_cast<std::size_t>(k)] = vocab.encode(dataset[i].captions[static_cast<std::size_t>(k)]);

  GeneratorModel g = generator;
  g.set_trainable(false);
  const EncoderModel image_before = image_encoder;
  // Visual codes are fixed: compute f(E(x)) once.
  Tensor visual;
  {
    ag::NoGradGuard ng;
    visual = g.map(image_encoder.encode(ag::constant(images_to_tensor(images)))).value();
  }
  TextEncoderConfig mc = cfg.model;
  mc.style_dim = g.style_dim();
  TextTrainResult result{TextEncoderModel(vocab, mc, cfg.seed), {}, {}};
  TextEncoderModel& model = result.model;
  nn::Adam opt(cfg.lr, 0.9, 0.999);
  nn::Rng rng(cfg.seed ^ 0x7e47ULL);
  const int n = static_cast<int>(dataset.size()), c = g.style_dim();
  const int batch = std::min(cfg.batch, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int step = 0; step < cfg.steps; ++step) {
    // Distinct images per batch so in-batch negatives are real mismatches.
    for (int i = 0; i < batch; ++i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(i, n - 1))]);
    std::vector<Caption> batch_caps;
    Tensor wv({batch, c});
    for (int b = 0; b < batch; ++b) {
      const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(b)]);
      batch_caps.push_back(captions[idx][static_cast<std::size_t>(rng.uniform_int(0, data::kCaptionsPerImage - 1))]);
      std::copy_n(visual.ptr() + idx * c, c, wv.ptr() + static_cast<std::size_t>(b) * c);
    }
    ag::Var w_v = ag::repeat_layers(ag::constant(wv), layers);
    ag::Var w_l = ag::repeat_layers(g.map(model.encode(batch_caps)), layers);
    ag::Var loss = ag::add(ag::mean(vls_distance(w_v, w_l, p, cfg.variant)),
                           ag::scale(ranking_loss(w_v, w_l, cfg.margin, p, cfg.variant), cfg.ranking_weight));
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw DivergenceError(step, "alignment loss is not finite");
    ag::backward(loss);
    opt.step(model.params());
    result.loss.push_back(v);
  }
  if (!g.equals(generator) || !image_before.equals(image_encoder))
    throw Error("internal_error", "frozen weights changed during text encoder training");

  result.checkpoint = model.to_checkpoint();
  result.checkpoint.meta()["generator_hash"] = generator.to_checkpoint().hash();
  result.checkpoint.meta()["train"] = {{"steps", cfg.steps},
                                       {"seed", cfg.seed},
                                       {"margin", cfg.margin},
                                       {"ranking_weight", cfg.ranking_weight},
                                       {"variant", cfg.variant == VlsVariant::printed ? "printed" : "per_layer"},
                                       {"layer_weights", p.p}};
  result.model = TextEncoderModel::from_checkpoint(result.checkpoint, vocab);
  return result;
}

}  // namespace tedi
