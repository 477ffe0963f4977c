#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tedi/autograd.hpp"

namespace tedi::nn {

/// Seeded random source shared by initializers, samplers and renderers.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  int uniform_int(int lo, int hi_inclusive) {
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next() { return engine_(); }
  Tensor normal_tensor(Shape shape, double stddev = 1.0);

private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Ordered set of named trainable tensors. Copies are deep: a copied set
/// shares no storage with the original.
class ParamSet {
public:
  ParamSet() = default;
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  const ag::Var& add(const std::string& name, Tensor init);
  const ag::Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }
  std::size_t scalar_count() const;

  void set_trainable(bool on);
  bool trainable() const { return trainable_; }
  void zero_grad();

  /// Bitwise value equality (names, shapes, data).
  bool equals(const ParamSet& other) const;
  bool all_finite() const;

private:
  std::vector<std::pair<std::string, ag::Var>> items_;
  std::map<std::string, std::size_t> index_;
  bool trainable_ = true;
};

/// Adaptive-moment optimizer over a ParamSet.
class Adam {
public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// Applies one update from the accumulated gradients, then clears them.
  void step(ParamSet& params);
  void set_lr(double lr) { lr_ = lr; }

private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

// Initializers.
Tensor he_normal(Shape shape, int fan_in, Rng& rng, double gain = 1.4142135623730951);
/// Rows of the (shape[0], fan_in) reshaped matrix form an orthonormal set
/// (columns when shape[0] > fan_in), scaled by `gain`.
Tensor orthogonal(Shape shape, Rng& rng, double gain = 1.0);

// Layer helpers resolving "<prefix>.weight" / "<prefix>.bias" in a ParamSet.
void add_linear(ParamSet& ps, const std::string& prefix, int in, int out, Rng& rng, double gain = 1.4142135623730951,
                bool bias = true);
void add_conv(ParamSet& ps, const std::string& prefix, int in, int out, int kernel, Rng& rng,
              double gain = 1.4142135623730951, bool bias = true);
ag::Var linear(const ParamSet& ps, const std::string& prefix, const ag::Var& x);
ag::Var conv(const ParamSet& ps, const std::string& prefix, const ag::Var& x);

}  // namespace tedi::nn
