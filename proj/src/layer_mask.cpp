#include "tedi/layer_mask.hpp"

#include "tedi/error.hpp"

namespace tedi {

LayerMask LayerMask::full(int num_layers) {
  LayerMask m;
  for (int i = 0; i < num_layers; ++i) m.layers_.insert(i);
  return m;
}

LayerMask LayerMask::united(const LayerMask& other) const {
  LayerMask m = *this;
  m.layers_.insert(other.layers_.begin(), other.layers_.end());
  return m;
}

LayerMask LayerMask::complement(int num_layers) const {
  LayerMask m;
  for (int i = 0; i < num_layers; ++i)
    if (!contains(i)) m.layers_.insert(i);
  return m;
}

void LayerMask::validate(int num_layers) const {
  for (int i : layers_)
    if (i < 0 || i >= num_layers)
      throw ShapeError("layer index " + std::to_string(i) + " outside [0, " + std::to_string(num_layers) + ")");
}

std::string LayerMask::to_string() const {
  std::string s = "[";
  for (int i : layers_) s += (s.size() > 1 ? "," : "") + std::to_string(i);
  return s + "]";
}

}  // namespace tedi
