#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "tedi/control.hpp"
#include "tedi/eval.hpp"

namespace tedi {

/// Roles a registry can hold. Checkpoints for the model roles, JSON for
/// layer_map and lexicon.
inline constexpr std::array<const char*, 8> kRegistryRoles = {
    "generator", "image_encoder", "sketch_encoder", "label_encoder",
    "text_encoder", "classifier", "layer_map", "lexicon"};

struct RegistryEntry {
  std::string file;
  std::string sha256;
  std::string vocab_file;  // text_encoder only
  std::string vocab_sha256;
};

/// Directory of immutable model files plus `manifest.json` recording their
/// SHA-256. Every read is verified against the manifest.
class Registry {
public:
  explicit Registry(std::filesystem::path dir);
  /// `TEDI_REGISTRY_DIR`, else ./registry.
  static std::filesystem::path default_dir();

  const std::filesystem::path& dir() const { return dir_; }
  bool has(const std::string& role) const { return entries_.count(role) > 0; }
  const std::map<std::string, RegistryEntry>& entries() const { return entries_; }
  nlohmann::json manifest() const;

  /// Copies `file` (and `vocab` for a text encoder) in and rewrites the manifest.
  void add(const std::string& role, const std::filesystem::path& file,
           const std::optional<std::filesystem::path>& vocab = std::nullopt);
  /// Verified bytes of a role's file.
  std::string read(const std::string& role) const;
  std::string read_vocab() const;

private:
  void save_manifest() const;
  std::filesystem::path dir_;
  std::map<std::string, RegistryEntry> entries_;
};

/// Everything a registry provides, loaded once and then read-only.
struct LoadedModels {
  std::optional<GeneratorModel> generator;
  std::optional<EncoderModel> image_encoder, sketch_encoder, label_encoder;
  std::optional<TextEncoderModel> text_encoder;
  std::optional<AttributeClassifier> classifier;
  std::optional<AttributeLayerMap> layer_map;
  AttributeLexicon lexicon = AttributeLexicon::defaults();
  FeatureExtractor features;
  nlohmann::json manifest;

  static LoadedModels load(const Registry& registry);
  Pipeline pipeline() const;
  const EncoderModel& encoder_for(Modality m) const;
};

}  // namespace tedi
