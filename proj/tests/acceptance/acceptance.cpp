// End-to-end acceptance run: one PASS/FAIL line per criterion.
// Trains the toy pipeline in-process, then exercises the CLI for determinism.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "tedi/control.hpp"
#include "tedi/error.hpp"
#include "tedi/eval.hpp"
#include "tedi/instance_opt.hpp"
#include "tedi/vls.hpp"

using namespace tedi;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Image> images_of(std::span<const data::DatasetSample> s) {
  std::vector<Image> out;
  for (const auto& x : s) out.push_back(x.image);
  return out;
}

double mse(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.values().size());
}

// ---- formula fidelity -------------------------------------------------------

void formula_fidelity() {
  bool ok = num_layers(256) == 14 && num_layers(1024) == 18;
  for (int r = 16; r <= 1024; r *= 2) {
    const int l = num_layers(r);
    ok = ok && resolution_for_layers(l) == r && std::lround(std::pow(2.0, (l + 2) / 2.0)) == r;
  }
  bool rejects = false;
  try {
    num_layers(4);
  } catch (const InvalidResolution&) {
    rejects = true;
  }
  report("formula fidelity", ok && rejects,
         fmt("L(256)=%d L(1024)=%d, round trip R=16..1024, R=4 rejected: %s", num_layers(256), num_layers(1024),
             rejects ? "yes" : "no"));
}

// ---- gradient suite ---------------------------------------------------------

// Each coordinate is differenced at two steps: 1e-5 (near cbrt(eps), needed
// where roundoff dominates) and 1e-6 (needed where 1e-5 straddles a leaky-ReLU
// kink). The better-agreeing estimate counts.
double fd_error(const std::function<double()>& f, Tensor& values, const Tensor& analytic, int coords, unsigned seed) {
  std::vector<std::size_t> idx(values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (static_cast<int>(idx.size()) > coords) idx.resize(static_cast<std::size_t>(coords));
  double worst = 0.0;
  for (std::size_t i : idx) {
    const double saved = values[i];
    double best = 1e300;
    for (double h : {1e-5, 1e-6}) {
      values[i] = saved + h;
      const double fp = f();
      values[i] = saved - h;
      const double fm = f();
      values[i] = saved;
      best = std::min(best, testing::relative_error(analytic.empty() ? 0.0 : analytic[i], (fp - fm) / (2.0 * h)));
    }
    worst = std::max(worst, best);
  }
  return worst;
}

double param_error(nn::ParamSet& ps, const std::function<double()>& f, unsigned seed) {
  double worst = 0.0;
  unsigned k = 0;
  for (const auto& [name, var] : ps.items()) {
    ag::Var p = var;
    const Tensor analytic = p.grad();
    worst = std::max(worst, fd_error(f, p.mutable_value(), analytic, 3, seed + k++));
  }
  return worst;
}

void gradient_suite() {
  GeneratorConfig gc;
  gc.style_dim = 8;
  gc.channels = 4;
  gc.disc_channels = 4;
  gc.mapping_layers = 2;
  EncoderConfig ec;
  ec.style_dim = 8;
  ec.channels = 4;
  ec.hidden = 8;
  GeneratorModel g(gc, 7);
  g.set_trainable(false);
  EncoderModel e(ec, 8);
  Discriminator d({16, 3, 4}, 9);
  const FeatureExtractor F(3, 10, {4, 4, 4, 4});
  const Tensor x = images_to_tensor(images_of(data::generate_samples(2, 16, 11)));
  const InversionLossWeights w{0.05, 0.1, 10.0};

  std::map<std::string, double> err;
  {
    d.params().set_trainable(false);
    ag::backward(encoder_loss(x, e, g, d, F, w).total);
    err["encoder_loss"] = param_error(e.params(), [&] {
      ag::NoGradGuard ng;
      return encoder_loss(x, e, g, d, F, w).total.value().item();
    }, 1);
    d.params().set_trainable(true);
  }
  {
    e.params().set_trainable(false);
    ag::backward(inversion_discriminator_loss(x, x, e, g, d, w).surrogate);
    err["discriminator_loss+gp"] = param_error(d.params(), [&] { return inversion_discriminator_loss(x, x, e, g, d, w).value; }, 2);
  }
  nn::Rng rng(3);
  std::vector<double> pv(6);
  for (double& v : pv) v = rng.uniform(0.1, 1.0);
  const LayerWeights p{pv};
  {
    ag::Var a = ag::parameter(rng.normal_tensor({1, 6, 5})), b = ag::parameter(rng.normal_tensor({1, 6, 5}));
    ag::backward(ag::mean(vls_distance(a, b, p)));
    auto f = [&] {
      ag::NoGradGuard ng;
      return ag::mean(vls_distance(a, b, p)).value().item();
    };
    err["vls_loss"] = std::max(fd_error(f, a.mutable_value(), a.grad(), 30, 4),
                               fd_error(f, b.mutable_value(), b.grad(), 30, 5));
  }
  {
    ag::Var a = ag::parameter(rng.normal_tensor({4, 6, 5})), b = ag::parameter(rng.normal_tensor({4, 6, 5}));
    ag::backward(ranking_loss(a, b, 1.5, p));
    auto f = [&] {
      ag::NoGradGuard ng;
      return ranking_loss(a, b, 1.5, p).value().item();
    };
    err["ranking_loss"] = std::max(fd_error(f, a.mutable_value(), a.grad(), 30, 6),
                                   fd_error(f, b.mutable_value(), b.grad(), 30, 7));
  }
  {
    e.params().set_trainable(false);
    const Image img = data::generate_samples(1, 16, 12)[0].image;
    const InstanceModels m{g, e, F};
    const OptConfig cfg;
    ag::Var wv = ag::parameter(rng.normal_tensor({1, 6, 8}));
    ag::backward(instance_objective(wv, img, m, cfg).total);
    auto f = [&] {
      ag::NoGradGuard ng;
      return instance_objective(wv, img, m, cfg).total.value().item();
    };
    err["instance_objective"] = fd_error(f, wv.mutable_value(), wv.grad(), 30, 8);
  }
  double worst = 0.0;
  std::string detail;
  for (const auto& [k, v] : err) {
    worst = std::max(worst, v);
    detail += fmt("%s=%.1e ", k.c_str(), v);
  }
  report("gradient suite", worst < 1e-4, detail + "(max rel err < 1e-4)");
}

// ---- mixing algebra and VLS exactness --------------------------------------

StyleW random_code(nn::Rng& rng, int layers, int dim) {
  StyleW w(layers, dim);
  for (int i = 0; i < layers; ++i)
    for (double& v : w.row(i)) v = rng.normal();
  return w;
}

void mixing_algebra() {
  nn::Rng rng(21);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int l = static_cast<int>(rng.uniform_int(1, 18)), c = static_cast<int>(rng.uniform_int(1, 9));
    const StyleW wc = random_code(rng, l, c), ws = random_code(rng, l, c);
    LayerMask a, b;
    for (int i = 0; i < l; ++i) {
      if (rng.bernoulli(0.5)) a.insert(i);
      if (rng.bernoulli(0.5)) b.insert(i);
    }
    const StyleW m = mix_styles(wc, ws, a);
    bool ok = mix_styles(wc, wc, a) == wc && mix_styles(wc, ws, LayerMask{}) == wc &&
              mix_styles(wc, ws, LayerMask::full(l)) == ws && mix_styles(m, ws, b) == mix_styles(wc, ws, a.united(b));
    for (int i = 0; i < l; ++i) {
      const auto src = a.contains(i) ? ws.row(i) : wc.row(i);
      ok = ok && std::equal(m.row(i).begin(), m.row(i).end(), src.begin(), src.end());
    }
    bad += !ok;
  }
  report("mixing algebra", bad == 0, fmt("%d/1000 randomized cases violate an invariant", bad));
}

void vls_exactness() {
  nn::Rng rng(22);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const int l = 2 * static_cast<int>(rng.uniform_int(1, 9)), c = static_cast<int>(rng.uniform_int(1, 9));
    const StyleW a = random_code(rng, l, c), b = random_code(rng, l, c);
    std::vector<double> p(static_cast<std::size_t>(l));
    for (double& v : p) v = rng.uniform(0.0, 1.0);
    p[0] += 1e-3;
    double oracle = 0.0;
    for (int k = 0; k < c; ++k) {
      double s = 0.0;
      for (int i = 0; i < l; ++i) s += p[static_cast<std::size_t>(i)] * (a.row(i)[k] - b.row(i)[k]);
      oracle += s * s;
    }
    worst = std::max(worst, std::abs(vls_loss(a, b, LayerWeights{p}) - oracle));
  }
  StyleW a(2, 1), b(2, 1);
  a.row(0)[0] = 1.0;
  a.row(1)[0] = -1.0;
  const double cancel = vls_loss(a, b, LayerWeights{{1.0, 1.0}});
  report("vls exactness", worst <= 1e-6 && cancel == 0.0,
         fmt("max |loss - oracle| = %.1e over 500 cases; cancellation case = %g", worst, cancel));
}

// ---- metric sanity ----------------------------------------------------------

void metric_sanity() {
  const auto set = images_of(data::generate_samples(32, 16, 31));
  const double same = fid_proxy(set, set);

  nn::Rng rng(32);
  const int n = 20000, d = 4;
  Tensor a({n, d}), b({n, d});
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal() + (i % d == 0 ? 3.0 : 0.0);
  }
  const double gap = frechet_distance(a, b);

  const auto pool = images_of(data::generate_samples(48, 16, 33));
  int violations = 0;
  for (int t = 0; t < 1000; ++t) {
    const Image& x = pool[static_cast<std::size_t>(rng.uniform_int(0, 47))];
    const Image& y = pool[static_cast<std::size_t>(rng.uniform_int(0, 47))];
    const Image& z = pool[static_cast<std::size_t>(rng.uniform_int(0, 47))];
    const double xy = lpips_proxy(x, y), yx = lpips_proxy(y, x), xz = lpips_proxy(x, z), zy = lpips_proxy(z, y);
    const bool ok = lpips_proxy(x, x) == 0.0 && xy >= 0.0 && std::abs(xy - yx) <= 1e-12 && xy <= xz + zy + 1e-12;
    violations += !ok;
  }
  const bool pass = std::abs(same) <= 1e-6 && std::abs(gap - 9.0) <= 0.05 * 9.0 && violations == 0;
  report("metric sanity", pass,
         fmt("fid(identical)=%.1e, mean-gap fid=%.3f vs 9, lpips violations %d/1000", same, gap, violations));
}

// ---- trained pipeline -------------------------------------------------------

struct Trained {
  GeneratorModel g;
  EncoderModel e;
  TextEncoderModel t;
  AttributeClassifier c;
  AttributeLayerMap map{6};
};

GeneratorModel train_gan() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto imgs = images_of(data::generate_samples(512, 16, 7));
  GanTrainConfig tc;
  tc.steps = 3000;
  tc.mixing_prob = 0.9;
  auto r = train_generator(imgs, GeneratorConfig{}, tc);
  std::printf("info  generator trained: %d steps in %.0f s\n", tc.steps, seconds_since(t0));
  return r.model;
}

void inversion_efficacy(Trained& m) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = data::generate_samples(256, 16, 100);
  const Tensor held = images_to_tensor(images_of(data::generate_samples(64, 16, 200)));
  InversionTrainConfig cfg;
  cfg.steps = 0;
  const double init = reconstruction_mse(train_inversion(train, m.g, cfg).encoder, m.g, held, held);
  cfg.steps = 300;
  auto r = train_inversion(train, m.g, cfg);
  const double trained = reconstruction_mse(r.encoder, m.g, held, held);
  const double baseline = reconstruction_mse(train_latent_baseline(m.g, cfg).encoder, m.g, held, held);
  m.e = r.encoder;
  const double drop = 1.0 - trained / init;
  report("inversion efficacy", drop >= 0.5 && trained < baseline,
         fmt("held-out MSE %.4f -> %.4f (drop %.0f%%), latent-loss baseline %.4f, %.0f s", init, trained, 100 * drop,
             baseline, seconds_since(t0)));
}

void alignment_efficacy(Trained& m) {
  const auto t0 = std::chrono::steady_clock::now();
  TextTrainConfig cfg;
  cfg.steps = 500;
  auto r = train_text_encoder(data::generate_samples(1024, 16, 100), m.e, m.g, cfg);
  m.t = r.model;
  const auto held = data::generate_samples(64, 16, 200);
  const Tensor gallery = image_codes(m.e, m.g, images_of(held));
  int hits = 0;
  for (int i = 0; i < 64; ++i) {
    const Caption q = m.t.vocab().encode(held[static_cast<std::size_t>(i)].captions[static_cast<std::size_t>(i % 10)]);
    const Tensor qc = text_codes(m.t, m.g, std::span<const Caption>(&q, 1));
    hits += rank_by_distance(qc, gallery, 1, LayerWeights::uniform(m.g.num_layers()))[0] == i;
  }
  const double top1 = hits / 64.0;
  report("alignment efficacy", top1 >= 5.0 / 64.0,
         fmt("top-1 %d/64 = %.3f (need >= %.3f), %.0f s", hits, top1, 5.0 / 64.0, seconds_since(t0)));
}

void instance_optimization(const Trained& m) {
  const auto t0 = std::chrono::steady_clock::now();
  const FeatureExtractor f;
  const InstanceModels im{m.g, m.e, f};
  const OptConfig cfg;
  int monotone = 0;
  double before = 0.0, after = 0.0;
  const auto held = data::generate_samples(16, 16, 400);
  for (const auto& s : held) {
    const StyleW w0 = m.g.map_latent(m.e.encode_image(s.image));
    const OptResult r = optimize_instance(s.image, w0, im, cfg);
    monotone += r.objective <= r.initial_objective;
    before += mse(m.g.synthesize(w0), s.image);
    after += mse(m.g.synthesize(r.code), s.image);
  }
  const double gain = 1.0 - after / before;
  report("instance optimization", monotone == 16 && gain >= 0.3,
         fmt("objective <= initial on %d/16, pixel MSE %.4f -> %.4f (%.0f%% better), %.0f s", monotone, before / 16,
             after / 16, 100 * gain, seconds_since(t0)));
}

void train_classifier_and_map(Trained& m) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = train_classifier(data::generate_samples(4000, 16, 500), data::generate_samples(1000, 16, 600, 100000),
                            ClassifierTrainConfig{});
  m.c = r.classifier;
  std::string acc;
  for (double a : m.c.validation()) acc += fmt("%.3f ", a);
  std::printf("info  classifier held-out accuracy: %s(%.0f s)\n", acc.c_str(), seconds_since(t0));
  m.c.require_validated();
  const ProbeResult pr = probe_layer_attributes(m.g, m.c, ProbeConfig{});
  m.map = pr.map;
  std::printf("info  probed layer map: %s\n", m.map.to_json().at("attributes").dump().c_str());
}

void edit_locality(const Trained& m) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto names = m.map.names();
  if (names.empty()) {
    report("edit locality", false, "probe assigned no attribute to any layer");
    return;
  }
  const FeatureExtractor f;
  const AttributeLexicon lex = AttributeLexicon::defaults();
  const Pipeline p{&m.g, &m.e, &m.t, &m.map, &lex, &f};
  const auto pool = data::generate_samples(400, 16, 700);
  const int na = data::num_attributes();
  std::vector<int> flips(static_cast<std::size_t>(na)), tried(static_cast<std::size_t>(na)),
      kept(static_cast<std::size_t>(na)), seen(static_cast<std::size_t>(na));
  int n = 0;
  for (std::size_t k = 0; k < pool.size() && n < 50; ++k) {
    const auto& s = pool[k];
    const std::string& name = names[static_cast<std::size_t>(n) % names.size()];
    const int a = data::attribute_index(name);
    const int classes = data::kAttributeClasses[static_cast<std::size_t>(a)];
    data::AttributeVector target = s.attributes;
    const int want = (data::attribute_value(target, a) + 1 + static_cast<int>(k) % (classes - 1)) % classes;
    data::set_attribute_value(target, a, want);
    try {
      target.validate();
    } catch (const Error&) {
      continue;
    }
    const std::string caption = data::caption_from_attributes(target, n % data::kCaptionsPerImage);
    const Manipulation out = manipulate(p, s.image, caption, MaskSpec::explicit_mask(m.map.at(name)), false);
    const AttributeValues before = m.c.predict(s.image), after = m.c.predict(out.image);
    ++tried[static_cast<std::size_t>(a)];
    flips[static_cast<std::size_t>(a)] += after[static_cast<std::size_t>(a)] == want;
    for (int b = 0; b < na; ++b) {
      if (b == a) continue;
      ++seen[static_cast<std::size_t>(b)];
      kept[static_cast<std::size_t>(b)] += after[static_cast<std::size_t>(b)] == before[static_cast<std::size_t>(b)];
    }
    ++n;
  }
  int total_flips = 0;
  for (int v : flips) total_flips += v;
  const double flip_rate = total_flips / static_cast<double>(n);
  double worst_keep = 1.0;
  std::string keep;
  for (int b = 0; b < na; ++b) {
    if (seen[static_cast<std::size_t>(b)] == 0) continue;
    const double r = kept[static_cast<std::size_t>(b)] / static_cast<double>(seen[static_cast<std::size_t>(b)]);
    worst_keep = std::min(worst_keep, r);
    keep += fmt("%s=%.2f ", data::kAttributeNames[static_cast<std::size_t>(b)], r);
  }
  report("edit locality", n == 50 && flip_rate >= 0.7 && worst_keep >= 0.9,
         fmt("%d edits, target flipped %.2f (need 0.70), preserved: %s(need 0.90 each), %.0f s", n, flip_rate,
             keep.c_str(), seconds_since(t0)));
}

void diversity_mechanism(const Trained& m) {
  const FeatureExtractor f;
  const AttributeLexicon lex = AttributeLexicon::defaults();
  const Pipeline p{&m.g, &m.e, &m.t, &m.map, &lex, &f};
  const LayerMask locked = m.map.names().empty() ? LayerMask{2, 3} : m.map.at(m.map.names().front());
  const Generation gen = generate_from_text(p, "a smiling young woman with short black hair", 8, 41,
                                            MaskSpec::explicit_mask(locked));
  bool same = gen.codes.size() == 8;
  for (const auto& c : gen.codes)
    for (int i : locked.indices())
      same = same && std::equal(c.row(i).begin(), c.row(i).end(), gen.codes[0].row(i).begin(), gen.codes[0].row(i).end());
  const double div = diversity_score(gen.images);
  report("diversity mechanism", same && div > 0.0,
         fmt("locked layers %s identical across 8 samples: %s, diversity %.4f", locked.to_string().c_str(),
             same ? "yes" : "no", div));
}

// ---- CLI determinism --------------------------------------------------------

std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p)); }

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_hash(e.path());
  return out;
}

void cli_determinism(const Trained& m, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string cli = TEDI_CLI_PATH;
  const fs::path shared = work / "shared";
  fs::create_directories(shared);
  m.c.to_checkpoint().save(shared / "classifier.tedi");
  const std::string cls = (shared / "classifier.tedi").string();
  const std::string models = " --registry-dir reg --generator gan.tedi --encoder enc.tedi --text-encoder text.tedi";
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"data build", "data build --n 48 --res 16 --seed 5 --out data"},
      {"train gan", "train gan --data data --out gan.tedi --steps 30 --seed 2"},
      {"train inverter", "train inverter --registry-dir reg --generator gan.tedi --data data --out enc.tedi --steps 20 --seed 3"},
      {"train modality-encoder",
       "train modality-encoder --modality sketch --registry-dir reg --generator gan.tedi --data data --out sketch.tedi --steps 10"},
      {"train text-encoder",
       "train text-encoder --registry-dir reg --generator gan.tedi --encoder enc.tedi --data data --out text.tedi --steps 20"},
      {"train classifier", "train classifier --data data --out small_classifier.tedi --steps 20"},
      {"invert", "invert" + models + " --image data/images/00000.png --refine --opt-steps 5 --out inv.png"},
      {"generate", "generate" + models + " --caption \"a smiling young woman with black hair\" --n 16 --seed 9 --locked 4,5 --out-dir gen"},
      {"manipulate", "manipulate" + models +
                         " --image data/images/00001.png --caption \"an old man with brown hair\" --mask 4,5 --refine --opt-steps 5 --out edit.png"},
      {"eval fid", "eval fid --real data --fake gen --out fid.json"},
      {"eval lpips", "eval lpips --a inv.png --b edit.png --out lpips.json"},
      {"eval diversity", "eval diversity --images gen --out diversity.json"},
      {"eval accuracy", "eval accuracy --data data --registry-dir reg --classifier " + cls + " --out accuracy.json"},
      {"eval probe-layers",
       "eval probe-layers --registry-dir reg --generator gan.tedi --classifier " + cls + " --samples 4 --seed 3 --out map.json"},
      {"registry add", "registry add --registry-dir reg --role generator --file gan.tedi"},
      {"registry show", "registry show --registry-dir reg"},
  };
  std::vector<std::map<std::string, std::string>> rounds;
  std::vector<std::vector<std::string>> stdouts;
  std::string failed;
  for (int round = 0; round < 2; ++round) {
    const fs::path dir = work / ("round" + std::to_string(round));
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<std::string> outs;
    for (const auto& [name, args] : commands) {
      const std::string log = (dir / "stdout.txt").string();
      const std::string cmd = "cd \"" + dir.string() + "\" && \"" + cli + "\" " + args + " > \"" + log + "\" 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        failed += name + " (" + read_file(log) + ") ";
        outs.push_back("");
        continue;
      }
      outs.push_back(read_file(log));
      fs::remove(log);
    }
    rounds.push_back(tree_hashes(dir));
    stdouts.push_back(outs);
  }
  std::string differ;
  for (const auto& [file, h] : rounds[0]) {
    auto it = rounds[1].find(file);
    if (it == rounds[1].end() || it->second != h) differ += file + " ";
  }
  if (rounds[0].size() != rounds[1].size()) differ += "(file sets differ) ";
  for (std::size_t i = 0; i < commands.size(); ++i)
    if (stdouts[0][i] != stdouts[1][i]) differ += "stdout:" + commands[i].first + " ";
  report("cli determinism", failed.empty() && differ.empty() && !rounds[0].empty(),
         failed.empty() && differ.empty()
             ? fmt("%zu commands x 2 runs, %zu artifacts bitwise identical, %.0f s", commands.size(), rounds[0].size(),
                   seconds_since(t0))
             : "failed: " + failed + " differ: " + differ);
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  formula_fidelity();
  gradient_suite();
  mixing_algebra();
  vls_exactness();
  metric_sanity();

  Trained m;
  m.g = train_gan();
  inversion_efficacy(m);
  alignment_efficacy(m);
  instance_optimization(m);
  try {
    train_classifier_and_map(m);
    edit_locality(m);
  } catch (const Error& e) {
    report("edit locality", false, std::string("classifier oracle unavailable: ") + e.what());
  }
  diversity_mechanism(m);

  const fs::path work = fs::temp_directory_path() / "tedi_acceptance";
  fs::remove_all(work);
  cli_determinism(m, work);
  fs::remove_all(work);

  std::printf("%s  %d criteria failed, %.0f s total\n", failures ? "FAIL" : "PASS", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
