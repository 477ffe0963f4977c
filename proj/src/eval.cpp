#include "tedi/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "tedi/error.hpp"

namespace tedi {

namespace {
constexpr int kNumAttr = static_cast<int>(data::kAttributeNames.size());
constexpr double kSlope = 0.2;

int total_classes() {
  int t = 0;
  for (int c : data::kAttributeClasses) t += c;
  return t;
}

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("feature matrix must be (N, D), got " + shape_str(t.shape()));
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) m(i, j) = t[static_cast<std::size_t>(i) * t.dim(1) + j];
  return m;
}

Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace

AttributeValues attribute_values(const data::AttributeVector& a) {
  AttributeValues v{};
  for (int k = 0; k < kNumAttr; ++k) v[static_cast<std::size_t>(k)] = data::attribute_value(a, k);
  return v;
}

double frechet_distance(const Tensor& a, const Tensor& b, double eps) {
  const Eigen::MatrixXd x = to_matrix(a), y = to_matrix(b);
  if (x.cols() != y.cols()) throw ShapeError("feature dimensions differ");
  if (x.rows() < 2 || y.rows() < 2) throw ConfigError("need at least 2 samples per set");
  const Eigen::RowVectorXd mx = x.colwise().mean(), my = y.colwise().mean();
  const Eigen::MatrixXd cx = x.rowwise() - mx, cy = y.rowwise() - my;
  Eigen::MatrixXd sx = cx.transpose() * cx / static_cast<double>(x.rows() - 1);
  Eigen::MatrixXd sy = cy.transpose() * cy / static_cast<double>(y.rows() - 1);
  sx.diagonal().array() += eps;
  sy.diagonal().array() += eps;
  // Tr((Sx Sy)^1/2) = Tr((Sx^1/2 Sy Sx^1/2)^1/2), a symmetric problem.
  const Eigen::MatrixXd rx = sym_sqrt(sx);
  Eigen::MatrixXd inner = rx * sy * rx;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mx - my).squaredNorm() + sx.trace() + sy.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

double fid_proxy(std::span<const Image> real, std::span<const Image> fake, const FeatureExtractor& features) {
  if (real.size() < 16 || fake.size() < 16) throw ConfigError("fid_proxy needs at least 16 images per set");
  return frechet_distance(features.pooled(images_to_tensor(real)), features.pooled(images_to_tensor(fake)));
}

double lpips_proxy(const Image& a, const Image& b, const FeatureExtractor& features) {
  if (a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width())
    throw ShapeError("lpips_proxy: images differ in shape");
  const Image pair[] = {a, b};
  const Tensor x = images_to_tensor(pair);
  double total = 0.0;
  {
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) s += (a.values()[i] - b.values()[i]) * (a.values()[i] - b.values()[i]);
    total += std::sqrt(s / (a.height() * a.width()));
  }
  ag::NoGradGuard ng;
  const auto stages = features.stages(ag::constant(x));
  for (const auto& st : stages) {
    const Tensor& f = st.value();
    const int c = f.dim(1), hw = f.dim(2) * f.dim(3);
    double s = 0.0;
    for (int p = 0; p < hw; ++p) {
      double na = 0.0, nb = 0.0;
      for (int k = 0; k < c; ++k) {
        na += f[static_cast<std::size_t>(k) * hw + p] * f[static_cast<std::size_t>(k) * hw + p];
        nb += f[static_cast<std::size_t>(c + k) * hw + p] * f[static_cast<std::size_t>(c + k) * hw + p];
      }
      na = std::sqrt(na) + 1e-10;
      nb = std::sqrt(nb) + 1e-10;
      for (int k = 0; k < c; ++k) {
        const double d = f[static_cast<std::size_t>(k) * hw + p] / na - f[static_cast<std::size_t>(c + k) * hw + p] / nb;
        s += d * d;
      }
    }
    total += std::sqrt(s / hw);
  }
  return total / static_cast<double>(stages.size() + 1);
}

double diversity_score(std::span<const Image> images, const FeatureExtractor& features) {
  if (images.empty()) throw ConfigError("diversity_score: no images");
  if (images.size() == 1) return 0.0;
  double s = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      s += lpips_proxy(images[i], images[j], features);
      ++pairs;
    }
  return s / pairs;
}

AttributeClassifier::AttributeClassifier(const ClassifierConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  num_layers(cfg.resolution);
  nn::Rng rng(seed);
  nn::add_conv(params_, "conv0", 3, cfg.channels, 3, rng);
  int k = 1;
  for (int r = cfg.resolution; r > 4; r /= 2, ++k) nn::add_conv(params_, "conv" + std::to_string(k), cfg.channels, cfg.channels, 3, rng);
  nn::add_linear(params_, "fc", cfg.channels * 16, cfg.hidden, rng);
  nn::add_linear(params_, "heads", cfg.hidden, total_classes(), rng, 1.0);
}

ag::Var AttributeClassifier::logits(const ag::Var& x) const {
  if (x.value().rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.resolution || x.dim(3) != cfg_.resolution)
    throw ShapeError("classifier expects (N, 3, " + std::to_string(cfg_.resolution) + ", " +
                     std::to_string(cfg_.resolution) + "), got " + shape_str(x.shape()));
  ag::Var h = ag::leaky_relu(nn::conv(params_, "conv0", x), kSlope);
  int k = 1;
  for (int r = cfg_.resolution; r > 4; r /= 2, ++k)
    h = ag::leaky_relu(nn::conv(params_, "conv" + std::to_string(k), ag::avgpool2x(h)), kSlope);
  h = ag::leaky_relu(nn::linear(params_, "fc", ag::reshape(h, {x.dim(0), cfg_.channels * 16})), kSlope);
  return nn::linear(params_, "heads", h);
}

std::vector<AttributeValues> AttributeClassifier::predict(std::span<const Image> images) const {
  if (images.empty()) return {};
  ag::NoGradGuard ng;
  const Tensor l = logits(ag::constant(images_to_tensor(images))).value();
  const int total = l.dim(1);
  std::vector<AttributeValues> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    int offset = 0;
    for (int a = 0; a < kNumAttr; ++a) {
      const int classes = data::kAttributeClasses[static_cast<std::size_t>(a)];
      const double* row = l.ptr() + i * total + offset;
      out[i][static_cast<std::size_t>(a)] = static_cast<int>(std::max_element(row, row + classes) - row);
      offset += classes;
    }
  }
  return out;
}

AttributeValues AttributeClassifier::predict(const Image& image) const {
  return predict(std::span<const Image>(&image, 1))[0];
}

void AttributeClassifier::set_validation(const std::array<double, data::kAttributeNames.size()>& accuracy) {
  accuracy_ = accuracy;
}

bool AttributeClassifier::validated() const {
  return std::all_of(accuracy_.begin(), accuracy_.end(), [](double a) { return a >= kRequiredAccuracy; });
}

void AttributeClassifier::require_validated() const {
  if (validated()) return;
  std::string low;
  for (int a = 0; a < kNumAttr; ++a)
    if (accuracy_[static_cast<std::size_t>(a)] < kRequiredAccuracy)
      low += (low.empty() ? "" : ", ") + std::string(data::kAttributeNames[static_cast<std::size_t>(a)]) + "=" +
             std::to_string(accuracy_[static_cast<std::size_t>(a)]);
  throw ModelNotReady("attribute classifier below " + std::to_string(kRequiredAccuracy) + " held-out accuracy: " + low);
}

Checkpoint AttributeClassifier::to_checkpoint() const {
  Checkpoint ck("attribute_classifier");
  ck.meta() = {{"resolution", cfg_.resolution},
               {"channels", cfg_.channels},
               {"hidden", cfg_.hidden},
               {"heldout_accuracy", std::vector<double>(accuracy_.begin(), accuracy_.end())}};
  ck.add_params("classifier/", params_);
  return ck;
}

AttributeClassifier AttributeClassifier::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "attribute_classifier")
    throw ParseError("expected an attribute_classifier checkpoint, got '" + ck.kind() + "'");
  const auto& m = ck.meta();
  ClassifierConfig cfg{m.at("resolution").get<int>(), m.at("channels").get<int>(), m.at("hidden").get<int>()};
  AttributeClassifier c(cfg, 0);
  ck.load_params("classifier/", c.params_);
  const auto acc = m.at("heldout_accuracy").get<std::vector<double>>();
  if (static_cast<int>(acc.size()) != kNumAttr) throw ParseError("classifier checkpoint: bad accuracy record");
  std::copy(acc.begin(), acc.end(), c.accuracy_.begin());
  return c;
}

std::array<double, data::kAttributeNames.size()> per_attribute_accuracy(const AttributeClassifier& c,
                                                                         std::span<const data::DatasetSample> samples) {
  if (samples.empty()) throw ConfigError("per_attribute_accuracy: no samples");
  std::array<double, data::kAttributeNames.size()> acc{};
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    std::vector<Image> imgs;
    for (std::size_t i = begin; i < std::min(samples.size(), begin + kChunk); ++i) imgs.push_back(samples[i].image);
    const auto pred = c.predict(imgs);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const AttributeValues truth = attribute_values(samples[begin + i].attributes);
      for (int a = 0; a < kNumAttr; ++a)
        acc[static_cast<std::size_t>(a)] += pred[i][static_cast<std::size_t>(a)] == truth[static_cast<std::size_t>(a)];
    }
  }
  for (double& a : acc) a /= static_cast<double>(samples.size());
  return acc;
}

ClassifierTrainResult train_classifier(std::span<const data::DatasetSample> train,
                                       std::span<const data::DatasetSample> heldout, const ClassifierTrainConfig& cfg) {
  if (train.empty() || heldout.empty()) throw ConfigError("train_classifier: empty train or held-out set");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("train_classifier: steps must be >= 0 and batch >= 1");
  ClassifierConfig mc = cfg.model;
  mc.resolution = train[0].image.height();
  ClassifierTrainResult result{AttributeClassifier(mc, cfg.seed), {}, {}};
  AttributeClassifier& model = result.classifier;
  nn::Adam opt(cfg.lr, 0.9, 0.999);
  nn::Rng rng(cfg.seed ^ 0xc1a55ULL);
  const int n = static_cast<int>(train.size());
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Image> imgs;
    std::array<std::vector<int>, data::kAttributeNames.size()> labels;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& s = train[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
      Image img = s.image;
      const double sd = rng.uniform(0.0, cfg.noise);
      for (double& v : img.values()) v += sd * rng.normal();
      imgs.push_back(std::move(img));
      const AttributeValues truth = attribute_values(s.attributes);
      for (int a = 0; a < kNumAttr; ++a) labels[static_cast<std::size_t>(a)].push_back(truth[static_cast<std::size_t>(a)]);
    }
    ag::Var l = model.logits(ag::constant(images_to_tensor(imgs)));
    ag::Var loss;
    int offset = 0;
    for (int a = 0; a < kNumAttr; ++a) {
      const int classes = data::kAttributeClasses[static_cast<std::size_t>(a)];
      ag::Var term = ag::cross_entropy(l, labels[static_cast<std::size_t>(a)], offset, classes);
      loss = a == 0 ? term : ag::add(loss, term);
      offset += classes;
    }
    const double v = loss.value().item();
    if (!std::isfinite(v)) throw DivergenceError(step, "classifier loss is not finite");
    ag::backward(loss);
    opt.step(model.params());
    result.loss.push_back(v);
  }
  result.checkpoint = model.to_checkpoint();
  result.classifier = AttributeClassifier::from_checkpoint(result.checkpoint);
  result.classifier.set_validation(per_attribute_accuracy(result.classifier, heldout));
  result.checkpoint = result.classifier.to_checkpoint();
  result.checkpoint.meta()["train"] = {{"steps", cfg.steps}, {"seed", cfg.seed}, {"noise", cfg.noise}};
  return result;
}

double attribute_accuracy(const AttributeClassifier& c, std::span<const Image> images,
                          const data::AttributeVector& expected, std::span<const std::string> which) {
  c.require_validated();
  if (images.empty()) throw ConfigError("attribute_accuracy: no images");
  std::vector<int> idx;
  for (const auto& name : which) idx.push_back(data::attribute_index(name));
  if (idx.empty()) return 1.0;
  const AttributeValues truth = attribute_values(expected);
  const auto pred = c.predict(images);
  int hits = 0;
  for (const auto& p : pred) {
    bool ok = true;
    for (int a : idx) ok = ok && p[static_cast<std::size_t>(a)] == truth[static_cast<std::size_t>(a)];
    hits += ok;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

ProbeResult probe_layer_attributes(const StyleSampler& map, const StyleRenderer& render, const ImageClassifier& classify,
                                   int num_layers, int style_dim, const ProbeConfig& cfg) {
  if (cfg.samples < 1) throw ConfigError("probe needs samples >= 1");
  if (num_layers < 1 || style_dim < 1) throw ConfigError("probe needs a positive code shape");
  nn::Rng rng(cfg.seed);
  auto draw = [&]() {
    LatentZ z(std::vector<double>(static_cast<std::size_t>(style_dim)));
    for (double& v : z.values()) v = rng.normal();
    return map(z);
  };
  ProbeResult result{AttributeLayerMap(num_layers), std::vector<std::array<double, data::kAttributeNames.size()>>(
                                                        static_cast<std::size_t>(num_layers))};
  for (int s = 0; s < cfg.samples; ++s) {
    const StyleW w = draw();
    const AttributeValues base = classify(render(w));
    for (int i = 0; i < num_layers; ++i) {
      const StyleW other = draw();
      StyleW w2 = w;
      std::copy(other.row(i).begin(), other.row(i).end(), w2.row(i).begin());
      const AttributeValues pred = classify(render(w2));
      for (int a = 0; a < kNumAttr; ++a)
        result.flip_rate[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] +=
            pred[static_cast<std::size_t>(a)] != base[static_cast<std::size_t>(a)];
    }
  }
  for (auto& row : result.flip_rate)
    for (double& r : row) r /= cfg.samples;
  for (int a = 0; a < kNumAttr; ++a) {
    std::vector<double> rates;
    for (const auto& row : result.flip_rate) rates.push_back(row[static_cast<std::size_t>(a)]);
    std::vector<double> sorted = rates;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    LayerMask mask;
    for (int i = 0; i < num_layers; ++i)
      if (rates[static_cast<std::size_t>(i)] > cfg.ratio * median && rates[static_cast<std::size_t>(i)] >= cfg.min_rate)
        mask.insert(i);
    if (!mask.empty()) result.map.set(data::kAttributeNames[static_cast<std::size_t>(a)], mask);
  }
  return result;
}

ProbeResult probe_layer_attributes(const GeneratorModel& g, const AttributeClassifier& c, const ProbeConfig& cfg) {
  c.require_validated();
  return probe_layer_attributes([&](const LatentZ& z) { return g.map_latent(z); },
                                [&](const StyleW& w) { return g.synthesize(w); },
                                [&](const Image& x) { return c.predict(x); }, g.num_layers(), g.style_dim(), cfg);
}

nlohmann::json metric_report(const std::string& metric, double value, int n, const nlohmann::json& config,
                             std::uint64_t seed) {
  return {{"metric", metric}, {"value", value}, {"n", n}, {"config_hash", sha256_hex(config.dump())}, {"seed", seed}};
}

}  // namespace tedi
