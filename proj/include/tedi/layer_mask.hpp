#pragma once

#include <set>
#include <string>
#include <vector>

namespace tedi {

/// Set of style-layer indices in [0, L).
class LayerMask {
public:
  LayerMask() = default;
  LayerMask(std::initializer_list<int> layers) : layers_(layers) {}
  explicit LayerMask(const std::vector<int>& layers) : layers_(layers.begin(), layers.end()) {}
  static LayerMask full(int num_layers);

  bool contains(int layer) const { return layers_.count(layer) > 0; }
  bool empty() const { return layers_.empty(); }
  int size() const { return static_cast<int>(layers_.size()); }
  std::vector<int> indices() const { return {layers_.begin(), layers_.end()}; }
  void insert(int layer) { layers_.insert(layer); }

  LayerMask united(const LayerMask& other) const;
  LayerMask complement(int num_layers) const;
  /// Throws ShapeError when an index falls outside [0, num_layers).
  void validate(int num_layers) const;
  std::string to_string() const;

  friend bool operator==(const LayerMask&, const LayerMask&) = default;

private:
  std::set<int> layers_;
};

}  // namespace tedi
