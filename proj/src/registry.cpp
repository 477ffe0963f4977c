#include "tedi/registry.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "tedi/error.hpp"

namespace tedi {

namespace fs = std::filesystem;

namespace {
void check_role(const std::string& role) {
  if (std::find(kRegistryRoles.begin(), kRegistryRoles.end(), role) == kRegistryRoles.end())
    throw LookupError("unknown registry role '" + role + "'");
}

std::string verified(const fs::path& path, const std::string& expected) {
  if (!fs::exists(path)) throw LookupError("registry file missing: " + path.string());
  std::string bytes = read_file(path);
  const std::string got = sha256_hex(bytes);
  if (got != expected)
    throw IntegrityError("hash mismatch for " + path.string() + ": manifest " + expected + ", file " + got);
  return bytes;
}
}  // namespace

Registry::Registry(fs::path dir) : dir_(std::move(dir)) {
  const fs::path m = dir_ / "manifest.json";
  if (!fs::exists(m)) return;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(m));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad registry manifest " + m.string() + ": " + e.what());
  }
  for (const auto& [role, v] : j.at("models").items()) {
    check_role(role);
    RegistryEntry e{v.at("file"), v.at("sha256"), v.value("vocab_file", ""), v.value("vocab_sha256", "")};
    entries_[role] = e;
  }
}

fs::path Registry::default_dir() {
  const char* env = std::getenv("TEDI_REGISTRY_DIR");
  return env && *env ? fs::path(env) : fs::path("registry");
}

nlohmann::json Registry::manifest() const {
  nlohmann::json models = nlohmann::json::object();
  for (const auto& [role, e] : entries_) {
    nlohmann::json v = {{"file", e.file}, {"sha256", e.sha256}};
    if (!e.vocab_file.empty()) {
      v["vocab_file"] = e.vocab_file;
      v["vocab_sha256"] = e.vocab_sha256;
    }
    models[role] = v;
  }
  return {{"models", models}};
}

void Registry::save_manifest() const { write_file(dir_ / "manifest.json", manifest().dump(2) + "\n"); }

void Registry::add(const std::string& role, const fs::path& file, const std::optional<fs::path>& vocab) {
  check_role(role);
  if (role == "text_encoder" && !vocab) throw ConfigError("a text encoder needs its vocabulary file");
  fs::create_directories(dir_);
  const std::string bytes = read_file(file);
  const bool json = role == "layer_map" || role == "lexicon";
  RegistryEntry e;
  e.file = role + (json ? ".json" : ".tedi");
  e.sha256 = sha256_hex(bytes);
  write_file(dir_ / e.file, bytes);
  if (vocab) {
    const std::string vb = read_file(*vocab);
    e.vocab_file = role + ".vocab";
    e.vocab_sha256 = sha256_hex(vb);
    write_file(dir_ / e.vocab_file, vb);
  }
  entries_[role] = e;
  save_manifest();
}

std::string Registry::read(const std::string& role) const {
  check_role(role);
  auto it = entries_.find(role);
  if (it == entries_.end()) throw ModelNotReady("registry " + dir_.string() + " has no " + role);
  return verified(dir_ / it->second.file, it->second.sha256);
}

std::string Registry::read_vocab() const {
  auto it = entries_.find("text_encoder");
  if (it == entries_.end() || it->second.vocab_file.empty())
    throw ModelNotReady("registry " + dir_.string() + " has no text encoder vocabulary");
  return verified(dir_ / it->second.vocab_file, it->second.vocab_sha256);
}

LoadedModels LoadedModels::load(const Registry& r) {
  LoadedModels m;
  m.manifest = r.manifest();
  auto ck = [&](const char* role) { return Checkpoint::from_bytes(r.read(role)); };
  auto js = [&](const char* role) {
    try {
      return nlohmann::json::parse(r.read(role));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string(role) + ": " + e.what());
    }
  };
  if (r.has("generator")) m.generator = GeneratorModel::from_checkpoint(ck("generator"));
  if (r.has("image_encoder")) m.image_encoder = encoder_from_checkpoint(ck("image_encoder"));
  if (r.has("sketch_encoder")) m.sketch_encoder = encoder_from_checkpoint(ck("sketch_encoder"));
  if (r.has("label_encoder")) m.label_encoder = encoder_from_checkpoint(ck("label_encoder"));
  if (r.has("text_encoder"))
    m.text_encoder = TextEncoderModel::from_checkpoint(ck("text_encoder"), Vocabulary::from_text(r.read_vocab()));
  if (r.has("classifier")) m.classifier = AttributeClassifier::from_checkpoint(ck("classifier"));
  if (r.has("layer_map")) m.layer_map = AttributeLayerMap::from_json(js("layer_map"));
  if (r.has("lexicon")) m.lexicon = AttributeLexicon::from_json(js("lexicon"));
  return m;
}

Pipeline LoadedModels::pipeline() const {
  return {generator ? &*generator : nullptr,     image_encoder ? &*image_encoder : nullptr,
          text_encoder ? &*text_encoder : nullptr, layer_map ? &*layer_map : nullptr,
          &lexicon,                               &features};
}

const EncoderModel& LoadedModels::encoder_for(Modality mod) const {
  const std::optional<EncoderModel>* e = mod == Modality::image    ? &image_encoder
                                         : mod == Modality::sketch ? &sketch_encoder
                                                                   : &label_encoder;
  if (!*e) throw ModelNotReady("no " + modality_name(mod) + " encoder loaded");
  return **e;
}

}  // namespace tedi
