#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tedi/layer_mask.hpp"

namespace tedi {

/// Attribute name -> style layers. Held zero-based in memory; files carry an
/// `index_base` (1 for tables quoted with 1-based layer numbers).
class AttributeLayerMap {
public:
  AttributeLayerMap() = default;
  explicit AttributeLayerMap(int num_layers, int index_base = 0) : num_layers_(num_layers), index_base_(index_base) {}

  int num_layers() const { return num_layers_; }
  int index_base() const { return index_base_; }
  void set(const std::string& attribute, const LayerMask& mask);
  bool contains(const std::string& attribute) const { return map_.count(attribute) > 0; }
  const LayerMask& at(const std::string& attribute) const;
  const std::map<std::string, LayerMask>& entries() const { return map_; }
  std::vector<std::string> names() const;

  /// File form: {"num_layers", "index_base", "attributes": {name: [layer, ...]}}.
  nlohmann::json to_json() const;
  static AttributeLayerMap from_json(const nlohmann::json& j);
  static AttributeLayerMap load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const AttributeLayerMap&, const AttributeLayerMap&) = default;

private:
  int num_layers_ = 0;
  int index_base_ = 0;
  std::map<std::string, LayerMask> map_;
};

/// Union of the masks of `attributes`; LookupError names the known ones.
LayerMask layers_for_attributes(const AttributeLayerMap& map, std::span<const std::string> attributes);

/// Keyword spotting of attribute mentions in free text.
class AttributeLexicon {
public:
  AttributeLexicon() = default;
  /// {"attributes": {name: ["phrase", ...]}}
  static AttributeLexicon from_json(const nlohmann::json& j);
  static AttributeLexicon load(const std::filesystem::path& path);
  /// Built-in lexicon covering the synthetic caption vocabulary.
  static AttributeLexicon defaults();

  void add(const std::string& attribute, const std::string& phrase);
  /// Attributes with at least one phrase occurring as whole tokens, sorted by name.
  std::vector<std::string> detect(std::string_view text) const;

private:
  std::map<std::string, std::vector<std::vector<std::string>>> phrases_;
};

}  // namespace tedi
