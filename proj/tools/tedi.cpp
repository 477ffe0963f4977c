// tedi: command-line front end for data, training, pipelines, metrics and the HTTP service.

#include <httplib.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "tedi/error.hpp"
#include "tedi/service.hpp"

using namespace tedi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config files ----------------------------------------------------------

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    json j = json::parse(read_file(path));
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

template <class T>
void take(json& j, const char* key, T& v) {
  if (!j.contains(key)) return;
  try {
    v = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
  j.erase(key);
}

void reject_rest(const json& j, const std::string& where) {
  if (!j.empty()) throw ConfigError("unknown " + where + " config key '" + j.begin().key() + "'");
}

json sub(json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  json s = j.at(key);
  j.erase(key);
  return s;
}

// ---- model sources ---------------------------------------------------------

struct ModelFlags {
  std::string registry, generator, encoder, text_encoder, layer_map, lexicon, classifier;
};

void add_model_flags(CLI::App* c, ModelFlags& f) {
  c->add_option("--registry-dir", f.registry, "Registry directory (default: $TEDI_REGISTRY_DIR or ./registry)");
  c->add_option("--generator", f.generator, "Generator checkpoint, overrides the registry");
  c->add_option("--encoder", f.encoder, "Image encoder checkpoint, overrides the registry");
  c->add_option("--text-encoder", f.text_encoder, "Text encoder checkpoint (vocabulary next to it as .vocab)");
  c->add_option("--layer-map", f.layer_map, "Attribute layer map JSON, overrides the registry");
  c->add_option("--lexicon", f.lexicon, "Attribute lexicon JSON, overrides the registry");
  c->add_option("--classifier", f.classifier, "Attribute classifier checkpoint, overrides the registry");
}

fs::path registry_dir(const ModelFlags& f) { return f.registry.empty() ? Registry::default_dir() : fs::path(f.registry); }

fs::path vocab_path(const fs::path& checkpoint) { return fs::path(checkpoint).replace_extension(".vocab"); }

LoadedModels load_models(const ModelFlags& f) {
  LoadedModels m = LoadedModels::load(Registry(registry_dir(f)));
  if (!f.generator.empty()) m.generator = GeneratorModel::from_checkpoint(Checkpoint::load(f.generator));
  if (!f.encoder.empty()) m.image_encoder = encoder_from_checkpoint(Checkpoint::load(f.encoder));
  if (!f.text_encoder.empty())
    m.text_encoder = TextEncoderModel::from_checkpoint(Checkpoint::load(f.text_encoder),
                                                       Vocabulary::from_text(read_file(vocab_path(f.text_encoder))));
  if (!f.layer_map.empty()) m.layer_map = AttributeLayerMap::load(f.layer_map);
  if (!f.lexicon.empty()) m.lexicon = AttributeLexicon::load(f.lexicon);
  if (!f.classifier.empty()) m.classifier = AttributeClassifier::from_checkpoint(Checkpoint::load(f.classifier));
  return m;
}

const GeneratorModel& need(const std::optional<GeneratorModel>& g) {
  if (!g) throw ModelNotReady("no generator: pass --generator or register one");
  return *g;
}
const EncoderModel& need(const std::optional<EncoderModel>& e) {
  if (!e) throw ModelNotReady("no image encoder: pass --encoder or register one");
  return *e;
}
const AttributeClassifier& need(const std::optional<AttributeClassifier>& c) {
  if (!c) throw ModelNotReady("no attribute classifier: pass --classifier or register one");
  return *c;
}

// ---- image folders ---------------------------------------------------------

std::vector<Image> load_images(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) {
    std::vector<Image> out;
    for (auto& s : data::load_dataset(dir)) out.push_back(std::move(s.image));
    return out;
  }
  if (!fs::is_directory(dir)) throw LookupError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& p : files) {
    try {
      out.push_back(image_from_png(read_file(p)));
    } catch (const Error& e) {
      throw ParseError(p.string() + ": " + e.what());
    }
  }
  if (out.empty()) throw LookupError("no PNG images in " + dir.string());
  return out;
}

void emit(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (!out.empty()) write_file(out, text);
  std::cout << text;
}

std::string checkpoint_summary(const Checkpoint& ck, const fs::path& out, double final_loss) {
  ck.save(out);
  return json{{"out", out.string()}, {"kind", ck.kind()}, {"sha256", ck.hash()}, {"final_loss", final_loss}}.dump();
}

double last(const std::vector<double>& v) { return v.empty() ? 0.0 : v.back(); }

// ---- train configs ---------------------------------------------------------

void apply(json j, GeneratorConfig& m, GanTrainConfig& t) {
  json mj = sub(j, "model");
  take(mj, "style_dim", m.style_dim);
  take(mj, "channels", m.channels);
  take(mj, "mapping_layers", m.mapping_layers);
  take(mj, "disc_channels", m.disc_channels);
  reject_rest(mj, "gan model");
  take(j, "steps", t.steps);
  take(j, "batch", t.batch);
  take(j, "lr_generator", t.lr_generator);
  take(j, "lr_discriminator", t.lr_discriminator);
  take(j, "mapping_lr_scale", t.mapping_lr_scale);
  take(j, "beta1", t.beta1);
  take(j, "beta2", t.beta2);
  take(j, "gp_weight", t.gp_weight);
  take(j, "mixing_prob", t.mixing_prob);
  reject_rest(j, "gan");
}

void apply(json j, InversionTrainConfig& t) {
  json mj = sub(j, "model");
  take(mj, "channels", t.encoder.channels);
  take(mj, "hidden", t.encoder.hidden);
  reject_rest(mj, "encoder model");
  json w = sub(j, "weights");
  take(w, "lambda1", t.weights.lambda1);
  take(w, "lambda2", t.weights.lambda2);
  take(w, "lambda3", t.weights.lambda3);
  reject_rest(w, "loss weight");
  take(j, "steps", t.steps);
  take(j, "batch", t.batch);
  take(j, "lr_encoder", t.lr_encoder);
  take(j, "lr_discriminator", t.lr_discriminator);
  take(j, "disc_channels", t.disc_channels);
  take(j, "reconstruct_input", t.reconstruct_input);
  reject_rest(j, "inverter");
}

void apply(json j, TextTrainConfig& t) {
  json mj = sub(j, "model");
  take(mj, "embed_dim", t.model.embed_dim);
  take(mj, "hidden", t.model.hidden);
  reject_rest(mj, "text model");
  std::string variant;
  take(j, "variant", variant);
  if (variant == "per_layer") t.variant = VlsVariant::per_layer;
  else if (!variant.empty() && variant != "printed") throw ConfigError("variant must be printed or per_layer");
  take(j, "steps", t.steps);
  take(j, "batch", t.batch);
  take(j, "lr", t.lr);
  take(j, "margin", t.margin);
  take(j, "ranking_weight", t.ranking_weight);
  take(j, "layer_weights", t.layer_weights);
  reject_rest(j, "text-encoder");
}

void apply(json j, ClassifierTrainConfig& t) {
  json mj = sub(j, "model");
  take(mj, "channels", t.model.channels);
  take(mj, "hidden", t.model.hidden);
  reject_rest(mj, "classifier model");
  take(j, "steps", t.steps);
  take(j, "batch", t.batch);
  take(j, "lr", t.lr);
  take(j, "noise", t.noise);
  reject_rest(j, "classifier");
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tedi: text-guided generation and manipulation with a toy style-based generator"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string out, config, data_dir;
  ModelFlags mf;
  std::function<void()> action;

  // data
  auto* data_cmd = app.add_subcommand("data", "Synthetic dataset tools");
  data_cmd->require_subcommand(1);
  int n = 1024, res = 16;
  {
    auto* c = data_cmd->add_subcommand("build", "Render a synthetic face dataset");
    c->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
    c->add_option("--res", res, "Resolution");
    c->add_option("--seed", seed, "Seed");
    c->add_option("--out", out, "Output directory")->required();
    c->callback([&] {
      action = [&] {
        const auto m = data::build_dataset(n, res, seed, out);
        std::cout << json{{"out", out}, {"n", m.n}, {"resolution", m.resolution}, {"seed", m.seed}}.dump() << "\n";
      };
    });
  }

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  train->require_subcommand(1);
  int steps = -1;
  std::string modality = "sketch", heldout_dir;
  auto add_train_common = [&](CLI::App* c) {
    c->add_option("--data", data_dir, "Dataset directory")->required();
    c->add_option("--out", out, "Output checkpoint")->required();
    c->add_option("--config", config, "JSON config file");
    c->add_option("--steps", steps, "Override the step count");
    c->add_option("--seed", seed, "Seed");
  };
  {
    auto* c = train->add_subcommand("gan", "Train the generator and its discriminator");
    add_train_common(c);
    c->callback([&] {
      action = [&] {
        GeneratorConfig m;
        GanTrainConfig t;
        apply(read_config(config), m, t);
        if (steps >= 0) t.steps = steps;
        t.seed = seed;
        const auto samples = data::load_dataset(data_dir);
        std::vector<Image> images;
        for (const auto& s : samples) images.push_back(s.image);
        m.resolution = images.empty() ? m.resolution : images[0].height();
        const auto r = train_generator(images, m, t);
        std::cout << checkpoint_summary(r.checkpoint, out, last(r.generator_loss)) << "\n";
      };
    });
  }
  {
    auto* c = train->add_subcommand("inverter", "Train the image encoder against a frozen generator");
    add_train_common(c);
    add_model_flags(c, mf);
    c->callback([&] {
      action = [&] {
        InversionTrainConfig t;
        apply(read_config(config), t);
        if (steps >= 0) t.steps = steps;
        t.seed = seed;
        const LoadedModels m = load_models(mf);
        const auto r = train_inversion(data::load_dataset(data_dir), need(m.generator), t);
        std::cout << checkpoint_summary(r.checkpoint, out, last(r.encoder_loss)) << "\n";
      };
    });
  }
  {
    auto* c = train->add_subcommand("modality-encoder", "Train a sketch or label encoder");
    add_train_common(c);
    add_model_flags(c, mf);
    c->add_option("--modality", modality, "sketch or label")->check(CLI::IsMember({"sketch", "label"}));
    c->callback([&] {
      action = [&] {
        InversionTrainConfig t;
        apply(read_config(config), t);
        if (steps >= 0) t.steps = steps;
        t.seed = seed;
        const LoadedModels m = load_models(mf);
        const auto r = train_modality_encoder(parse_modality(modality), data::load_dataset(data_dir), need(m.generator), t);
        std::cout << checkpoint_summary(r.checkpoint, out, last(r.encoder_loss)) << "\n";
      };
    });
  }
  {
    auto* c = train->add_subcommand("text-encoder", "Align a text encoder with the image encoder's W codes");
    add_train_common(c);
    add_model_flags(c, mf);
    c->callback([&] {
      action = [&] {
        TextTrainConfig t;
        apply(read_config(config), t);
        if (steps >= 0) t.steps = steps;
        t.seed = seed;
        const LoadedModels m = load_models(mf);
        const auto r = train_text_encoder(data::load_dataset(data_dir), need(m.image_encoder), need(m.generator), t);
        write_file(vocab_path(out), r.model.vocab().to_text());
        std::cout << checkpoint_summary(r.checkpoint, out, last(r.loss)) << "\n";
      };
    });
  }
  {
    auto* c = train->add_subcommand("classifier", "Train the attribute classifier used by the metrics");
    add_train_common(c);
    c->add_option("--heldout", heldout_dir, "Held-out dataset (default: last fifth of --data)");
    c->callback([&] {
      action = [&] {
        ClassifierTrainConfig t;
        apply(read_config(config), t);
        if (steps >= 0) t.steps = steps;
        t.seed = seed;
        auto train_set = data::load_dataset(data_dir);
        std::vector<data::DatasetSample> held;
        if (!heldout_dir.empty()) {
          held = data::load_dataset(heldout_dir);
        } else {
          const std::size_t k = train_set.size() / 5;
          if (k == 0) throw ConfigError("dataset too small to split a held-out fifth");
          held.assign(train_set.end() - static_cast<std::ptrdiff_t>(k), train_set.end());
          train_set.resize(train_set.size() - k);
        }
        const auto r = train_classifier(train_set, held, t);
        std::cout << checkpoint_summary(r.checkpoint, out, last(r.loss)) << "\n";
        json acc;
        for (int a = 0; a < data::num_attributes(); ++a)
          acc[data::kAttributeNames[static_cast<std::size_t>(a)]] = r.classifier.validation()[static_cast<std::size_t>(a)];
        std::cout << json{{"heldout_accuracy", acc}, {"validated", r.classifier.validated()}}.dump() << "\n";
      };
    });
  }

  // pipelines
  std::string image, caption, mask = "auto", locked = "auto", out_dir;
  bool refine = false;
  int opt_steps = OptConfig{}.steps;
  int count = 1;
  {
    auto* c = app.add_subcommand("invert", "Reconstruct an image through the encoder and generator");
    add_model_flags(c, mf);
    c->add_option("--image", image, "Input PNG")->required();
    c->add_flag("--refine", refine, "Refine with instance optimization");
    c->add_option("--opt-steps", opt_steps, "Refinement steps");
    c->add_option("--out", out, "Output PNG (code and trace go to <out>.json)")->required();
    c->callback([&] {
      action = [&] {
        const LoadedModels m = load_models(mf);
        const json r = run_invert(m, {{"image", base64_encode(read_file(image))}, {"refine", refine}, {"steps", opt_steps}});
        write_file(out, base64_decode(r.at("image").get<std::string>()));
        json side = r;
        side.erase("image");
        write_file(out + ".json", side.dump(2) + "\n");
        std::cout << json{{"out", out}}.dump() << "\n";
      };
    });
  }
  {
    auto* c = app.add_subcommand("generate", "Generate images from a caption");
    add_model_flags(c, mf);
    c->add_option("--caption", caption, "Caption")->required();
    c->add_option("--n", count, "Number of images");
    c->add_option("--seed", seed, "Seed");
    c->add_option("--locked", locked, "Layers kept from the caption: auto or a list like 2,3");
    c->add_option("--out-dir", out_dir, "Output directory")->required();
    c->callback([&] {
      action = [&] {
        const LoadedModels m = load_models(mf);
        const json r = run_generate(m, {{"caption", caption}, {"n", count}, {"seed", seed}, {"locked_mask", locked}});
        fs::create_directories(out_dir);
        json files = json::array();
        for (std::size_t i = 0; i < r.at("images").size(); ++i) {
          char name[32];
          std::snprintf(name, sizeof name, "%03zu.png", i);
          write_file(fs::path(out_dir) / name, base64_decode(r.at("images")[i].get<std::string>()));
          files.push_back(name);
        }
        const json side = {{"caption", caption}, {"seed", seed},         {"n", count},
                           {"locked_mask", r.at("locked_mask")}, {"files", files}, {"codes", r.at("codes")}};
        write_file(fs::path(out_dir) / "codes.json", side.dump(2) + "\n");
        std::cout << json{{"out_dir", out_dir}, {"files", files}, {"locked_mask", r.at("locked_mask")}}.dump() << "\n";
      };
    });
  }
  {
    auto* c = app.add_subcommand("manipulate", "Edit an image with a caption");
    add_model_flags(c, mf);
    c->add_option("--image", image, "Input PNG")->required();
    c->add_option("--caption", caption, "Caption")->required();
    c->add_option("--mask", mask, "Layers taken from the caption: auto or a list like 2,3");
    c->add_flag("--refine", refine, "Refine with instance optimization");
    c->add_option("--opt-steps", opt_steps, "Refinement steps");
    c->add_option("--out", out, "Output PNG (code goes to <out>.json)")->required();
    c->callback([&] {
      action = [&] {
        const LoadedModels m = load_models(mf);
        const json r = run_manipulate(m, {{"image", base64_encode(read_file(image))},
                                          {"caption", caption},
                                          {"mask", mask},
                                          {"refine", refine},
                                          {"steps", opt_steps}});
        write_file(out, base64_decode(r.at("image").get<std::string>()));
        json side = r;
        side.erase("image");
        write_file(out + ".json", side.dump(2) + "\n");
        std::cout << json{{"out", out}, {"applied_mask", r.at("applied_mask")}}.dump() << "\n";
      };
    });
  }

  // eval
  auto* eval = app.add_subcommand("eval", "Metrics; each prints a JSON report");
  eval->require_subcommand(1);
  std::string real_dir, fake_dir, a_png, b_png, images_dir, expect;
  int samples = ProbeConfig{}.samples;
  double ratio = ProbeConfig{}.ratio;
  {
    auto* c = eval->add_subcommand("fid", "Frechet distance between feature statistics of two image sets");
    c->add_option("--real", real_dir, "Dataset or PNG directory")->required();
    c->add_option("--fake", fake_dir, "Dataset or PNG directory")->required();
    c->add_option("--out", out, "Also write the report here");
    c->callback([&] {
      action = [&] {
        const auto r = load_images(real_dir), f = load_images(fake_dir);
        const double v = fid_proxy(r, f);
        emit(metric_report("fid_proxy", v, static_cast<int>(std::min(r.size(), f.size())),
                           {{"real", real_dir}, {"fake", fake_dir}}, 0),
             out);
      };
    });
  }
  {
    auto* c = eval->add_subcommand("lpips", "Perceptual distance between two images");
    c->add_option("--a", a_png, "PNG")->required();
    c->add_option("--b", b_png, "PNG")->required();
    c->add_option("--out", out, "Also write the report here");
    c->callback([&] {
      action = [&] {
        const double v = lpips_proxy(image_from_png(read_file(a_png)), image_from_png(read_file(b_png)));
        emit(metric_report("lpips_proxy", v, 1, {{"a", a_png}, {"b", b_png}}, 0), out);
      };
    });
  }
  {
    auto* c = eval->add_subcommand("diversity", "Mean pairwise perceptual distance of a set");
    c->add_option("--images", images_dir, "Dataset or PNG directory")->required();
    c->add_option("--out", out, "Also write the report here");
    c->callback([&] {
      action = [&] {
        const auto xs = load_images(images_dir);
        emit(metric_report("diversity", diversity_score(xs), static_cast<int>(xs.size()), {{"images", images_dir}}, 0), out);
      };
    });
  }
  {
    auto* c = eval->add_subcommand("accuracy", "Attribute classifier agreement");
    add_model_flags(c, mf);
    c->add_option("--data", data_dir, "Dataset: per-attribute accuracy against its labels");
    c->add_option("--images", images_dir, "PNG directory checked against --expect");
    c->add_option("--expect", expect, "Expected values, e.g. \"hair color=black,smile=yes\"");
    c->add_option("--out", out, "Also write the report here");
    c->callback([&] {
      action = [&] {
        const LoadedModels m = load_models(mf);
        const AttributeClassifier& cls = need(m.classifier);
        if (!data_dir.empty()) {
          cls.require_validated();
          const auto ds = data::load_dataset(data_dir);
          const auto acc = per_attribute_accuracy(cls, ds);
          json per;
          double mean = 0.0;
          for (int a = 0; a < data::num_attributes(); ++a) {
            per[data::kAttributeNames[static_cast<std::size_t>(a)]] = acc[static_cast<std::size_t>(a)];
            mean += acc[static_cast<std::size_t>(a)] / data::num_attributes();
          }
          json rep = metric_report("attribute_accuracy", mean, static_cast<int>(ds.size()), {{"data", data_dir}}, 0);
          rep["per_attribute"] = per;
          emit(rep, out);
          return;
        }
        if (images_dir.empty()) throw ConfigError("pass --data or --images with --expect");
        data::AttributeVector target;
        std::vector<std::string> which;
        std::stringstream ss(expect);
        for (std::string item; std::getline(ss, item, ',');) {
          const auto eq = item.find('=');
          if (eq == std::string::npos) throw ParseError("expected name=value in --expect, got '" + item + "'");
          const std::string name = item.substr(0, eq), value = item.substr(eq + 1);
          const int k = data::attribute_index(name);
          int v = -1;
          for (int c2 = 0; c2 < data::kAttributeClasses[static_cast<std::size_t>(k)]; ++c2)
            if (data::attribute_value_name(k, c2) == value) v = c2;
          if (v < 0) throw LookupError("unknown value '" + value + "' for " + name);
          data::set_attribute_value(target, k, v);
          which.push_back(name);
        }
        const auto xs = load_images(images_dir);
        emit(metric_report("attribute_accuracy", attribute_accuracy(cls, xs, target, which), static_cast<int>(xs.size()),
                           {{"images", images_dir}, {"expect", expect}}, 0),
             out);
      };
    });
  }
  {
    auto* c = eval->add_subcommand("probe-layers", "Assign attributes to generator layers by resampling");
    add_model_flags(c, mf);
    c->add_option("--samples", samples, "Codes per layer");
    c->add_option("--seed", seed, "Seed");
    c->add_option("--ratio", ratio, "Assignment threshold as a multiple of the median flip rate");
    c->add_option("--out", out, "Write the layer map JSON here");
    c->callback([&] {
      action = [&] {
        const LoadedModels m = load_models(mf);
        ProbeConfig pc;
        pc.samples = samples;
        pc.seed = seed;
        pc.ratio = ratio;
        const ProbeResult r = probe_layer_attributes(need(m.generator), need(m.classifier), pc);
        if (!out.empty()) r.map.save(out);
        json rates = json::array();
        for (const auto& row : r.flip_rate) rates.push_back(std::vector<double>(row.begin(), row.end()));
        std::cout << json{{"layer_map", r.map.to_json()}, {"flip_rate", rates},
                          {"attributes", std::vector<std::string>(data::kAttributeNames.begin(), data::kAttributeNames.end())}}
                         .dump(2)
                  << "\n";
      };
    });
  }

  // registry
  auto* reg = app.add_subcommand("registry", "Manage the model registry");
  reg->require_subcommand(1);
  std::string role, file, vocab;
  {
    auto* c = reg->add_subcommand("add", "Copy a model file into the registry");
    c->add_option("--registry-dir", mf.registry, "Registry directory");
    c->add_option("--role", role, "Role")->required()->check(CLI::IsMember(std::vector<std::string>(kRegistryRoles.begin(), kRegistryRoles.end())));
    c->add_option("--file", file, "Model file")->required();
    c->add_option("--vocab", vocab, "Vocabulary (text_encoder; default: next to --file)");
    c->callback([&] {
      action = [&] {
        Registry r(registry_dir(mf));
        std::optional<fs::path> v;
        if (role == "text_encoder") v = vocab.empty() ? vocab_path(file) : fs::path(vocab);
        r.add(role, file, v);
        std::cout << r.manifest().dump(2) << "\n";
      };
    });
  }
  {
    auto* c = reg->add_subcommand("show", "Print the manifest after verifying every file");
    c->add_option("--registry-dir", mf.registry, "Registry directory");
    c->callback([&] {
      action = [&] {
        const LoadedModels m = load_models(mf);
        std::cout << m.manifest.dump(2) << "\n";
      };
    });
  }

  // serve
  int port = 8080, threshold = ServiceConfig{}.job_threshold_steps;
  std::string host = "127.0.0.1";
  {
    auto* c = app.add_subcommand("serve", "Run the HTTP API");
    c->add_option("--port", port, "Port");
    c->add_option("--host", host, "Bind address");
    c->add_option("--registry-dir", mf.registry, "Registry directory (default: $TEDI_REGISTRY_DIR or ./registry)");
    c->add_option("--job-threshold", threshold, "Refinements with more steps than this run as jobs");
    c->callback([&] {
      action = [&] {
        const fs::path dir = registry_dir(mf);
        Service service(LoadedModels::load(Registry(dir)), dir.string(), ServiceConfig{threshold});
        httplib::Server server;
        service.mount(server);
        std::cerr << "listening on " << host << ":" << port << "\n";
        if (!server.listen(host, port)) throw ConfigError("cannot listen on " + host + ":" + std::to_string(port));
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage_error: " << one_line(e.what()) << "\n" << app.help();
    return 2;
  }
  try {
    if (action) action();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << one_line(e.what()) << "\n";
  } catch (const json::exception& e) {
    std::cerr << "error: parse_error: " << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: internal_error: " << one_line(e.what()) << "\n";
  }
  return 1;
}
