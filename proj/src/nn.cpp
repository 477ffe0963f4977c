#include "tedi/nn.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "tedi/error.hpp"

namespace tedi::nn {

Tensor Rng::normal_tensor(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = stddev * normal();
  return t;
}

ParamSet::ParamSet(const ParamSet& other) : index_(other.index_), trainable_(other.trainable_) {
  items_.reserve(other.items_.size());
  for (const auto& [name, var] : other.items_) {
    items_.emplace_back(name, trainable_ ? ag::parameter(var.value()) : ag::constant(var.value()));
  }
}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    ParamSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

const ag::Var& ParamSet::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  // Stored at checkpoint precision so a saved model reloads bitwise.
  for (double& v : init.values()) v = static_cast<float>(v);
  index_[name] = items_.size();
  items_.emplace_back(name, trainable_ ? ag::parameter(std::move(init)) : ag::constant(std::move(init)));
  return items_.back().second;
}

const ag::Var& ParamSet::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown parameter: " + name);
  return items_[it->second].second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : items_) n += v.value().size();
  return n;
}

void ParamSet::set_trainable(bool on) {
  trainable_ = on;
  for (auto& [_, v] : items_) {
    v.set_requires_grad(on);
    v.zero_grad();
  }
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : items_) v.zero_grad();
}

bool ParamSet::equals(const ParamSet& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (items_[i].first != other.items_[i].first) return false;
    if (!(items_[i].second.value() == other.items_[i].second.value())) return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& [_, v] : items_)
    if (!v.value().all_finite()) return false;
  return true;
}

void Adam::step(ParamSet& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, var_const] : params.items()) {
    ag::Var var = var_const;
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m = Tensor(g.shape(), 0.0);
      v = Tensor(g.shape(), 0.0);
    }
    Tensor& w = var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
    var.zero_grad();
  }
}

Tensor he_normal(Shape shape, int fan_in, Rng& rng, double gain) {
  return rng.normal_tensor(std::move(shape), gain / std::sqrt(static_cast<double>(fan_in)));
}

Tensor orthogonal(Shape shape, Rng& rng, double gain) {
  const int rows = shape.at(0);
  const int cols = static_cast<int>(shape_numel(shape) / static_cast<std::size_t>(rows));
  const bool tall = rows > cols;
  const int r = tall ? rows : cols, c = tall ? cols : rows;
  Eigen::MatrixXd g(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  // Sign fix so the result is uniformly distributed.
  Eigen::MatrixXd rmat = qr.matrixQR().topLeftCorner(c, c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rmat(j, j) < 0) q.col(j) *= -1.0;
  Tensor t(std::move(shape));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t[static_cast<std::size_t>(i) * cols + j] = gain * (tall ? q(i, j) : q(j, i));
  return t;
}

void add_linear(ParamSet& ps, const std::string& prefix, int in, int out, Rng& rng, double gain, bool bias) {
  ps.add(prefix + ".weight", he_normal({out, in}, in, rng, gain));
  if (bias) ps.add(prefix + ".bias", Tensor({out}, 0.0));
}

void add_conv(ParamSet& ps, const std::string& prefix, int in, int out, int kernel, Rng& rng, double gain,
              bool bias) {
  ps.add(prefix + ".weight", he_normal({out, in, kernel, kernel}, in * kernel * kernel, rng, gain));
  if (bias) ps.add(prefix + ".bias", Tensor({out}, 0.0));
}

ag::Var linear(const ParamSet& ps, const std::string& prefix, const ag::Var& x) {
  const std::string b = prefix + ".bias";
  return ag::linear(x, ps[prefix + ".weight"], ps.contains(b) ? ps[b] : ag::Var());
}

ag::Var conv(const ParamSet& ps, const std::string& prefix, const ag::Var& x) {
  const std::string b = prefix + ".bias";
  return ag::conv2d(x, ps[prefix + ".weight"], ps.contains(b) ? ps[b] : ag::Var());
}

}  // namespace tedi::nn
