#include "tedi/attribute_map.hpp"

#include <cctype>

#include "tedi/error.hpp"
#include "tedi/image.hpp"
#include "tedi/vls.hpp"

namespace tedi {

void AttributeLayerMap::set(const std::string& attribute, const LayerMask& mask) {
  for (char c : attribute)
    if (std::isupper(static_cast<unsigned char>(c))) throw ConfigError("attribute names must be lowercase: " + attribute);
  if (attribute.empty()) throw ConfigError("empty attribute name");
  mask.validate(num_layers_);
  map_[attribute] = mask;
}

const LayerMask& AttributeLayerMap::at(const std::string& attribute) const {
  auto it = map_.find(attribute);
  if (it == map_.end()) {
    std::string known;
    for (const auto& [name, _] : map_) known += (known.empty() ? "" : ", ") + name;
    throw LookupError("unknown attribute '" + attribute + "'; known: " + known);
  }
  return it->second;
}

std::vector<std::string> AttributeLayerMap::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : map_) out.push_back(name);
  return out;
}

nlohmann::json AttributeLayerMap::to_json() const {
  nlohmann::json attrs = nlohmann::json::object();
  for (const auto& [name, mask] : map_) {
    std::vector<int> layers;
    for (int i : mask.indices()) layers.push_back(i + index_base_);
    attrs[name] = layers;
  }
  return {{"num_layers", num_layers_}, {"index_base", index_base_}, {"attributes", attrs}};
}

AttributeLayerMap AttributeLayerMap::from_json(const nlohmann::json& j) {
  try {
    AttributeLayerMap m(j.at("num_layers").get<int>(), j.value("index_base", 0));
    if (m.num_layers_ < 1) throw ParseError("layer map: num_layers must be >= 1");
    for (const auto& [name, layers] : j.at("attributes").items()) {
      LayerMask mask;
      for (int i : layers.get<std::vector<int>>()) mask.insert(i - m.index_base_);
      m.set(name, mask);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("layer map: ") + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(std::string("layer map: ") + e.what());
  }
}

AttributeLayerMap AttributeLayerMap::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void AttributeLayerMap::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

LayerMask layers_for_attributes(const AttributeLayerMap& map, std::span<const std::string> attributes) {
  LayerMask out;
  for (const auto& a : attributes) out = out.united(map.at(a));
  return out;
}

AttributeLexicon AttributeLexicon::from_json(const nlohmann::json& j) {
  try {
    AttributeLexicon lex;
    for (const auto& [name, phrases] : j.at("attributes").items())
      for (const auto& p : phrases) lex.add(name, p.get<std::string>());
    return lex;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("lexicon: ") + e.what());
  }
}

AttributeLexicon AttributeLexicon::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

AttributeLexicon AttributeLexicon::defaults() {
  AttributeLexicon lex;
  const std::map<std::string, std::vector<std::string>> table = {
      {"gender", {"man", "woman", "he", "she", "his", "her", "male", "female", "boy", "girl", "lady", "guy"}},
      {"age", {"young", "old", "older", "elderly", "aged", "youthful"}},
      {"hair color", {"black", "blond", "blonde", "brown", "brunette", "dark hair"}},
      {"hair length", {"long", "short"}},
      {"smile", {"smile", "smiles", "smiling", "smiled", "grin", "grinning"}},
      {"eye glasses", {"eyeglasses", "glasses", "spectacles"}},
      {"beard", {"beard", "bearded", "stubble"}},
      {"head pose", {"pose", "facing", "turned", "profile"}},
      {"face shape", {"face shape", "round face", "oval face"}},
      {"nose", {"nose"}},
      {"lip", {"lip", "lips"}},
      {"cheekbones", {"cheekbones"}},
      {"chin", {"chin"}},
      {"face color", {"skin", "complexion", "pale", "tanned"}},
  };
  for (const auto& [name, phrases] : table)
    for (const auto& p : phrases) lex.add(name, p);
  return lex;
}

void AttributeLexicon::add(const std::string& attribute, const std::string& phrase) {
  auto toks = tokenize(phrase);
  if (toks.empty()) throw ConfigError("empty lexicon phrase for " + attribute);
  phrases_[attribute].push_back(std::move(toks));
}

std::vector<std::string> AttributeLexicon::detect(std::string_view text) const {
  const auto toks = tokenize(text);
  std::vector<std::string> found;
  for (const auto& [name, list] : phrases_) {
    bool hit = false;
    for (const auto& phrase : list) {
      for (std::size_t i = 0; !hit && i + phrase.size() <= toks.size(); ++i)
        hit = std::equal(phrase.begin(), phrase.end(), toks.begin() + static_cast<std::ptrdiff_t>(i));
      if (hit) break;
    }
    if (hit) found.push_back(name);
  }
  return found;
}

}  // namespace tedi
