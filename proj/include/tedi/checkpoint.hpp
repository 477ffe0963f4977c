#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tedi/nn.hpp"
#include "tedi/tensor.hpp"

namespace tedi {

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Serialized weights of one trainable component. On disk it is a POSIX tar
/// archive holding `manifest.json` plus one raw little-endian float32 file
/// per named tensor (`tensors/<name>.f32`).
class Checkpoint {
public:
  static constexpr int kFormatVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string kind);

  const std::string& kind() const { return kind_; }
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void add_tensor(const std::string& name, const Tensor& t);
  void add_params(const std::string& prefix, const nn::ParamSet& params);
  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

  /// Overwrites every parameter in `params` from "<prefix><name>" tensors;
  /// shapes must match.
  void load_params(const std::string& prefix, nn::ParamSet& params) const;

  /// Manifest as written to the archive.
  nlohmann::json manifest() const;
  std::string to_bytes() const;
  static Checkpoint from_bytes(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  std::string hash() const { return sha256_hex(to_bytes()); }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) { return a.to_bytes() == b.to_bytes(); }

private:
  std::string kind_;
  nlohmann::json meta_ = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors_;
};

namespace tar {
struct Entry {
  std::string name;
  std::string data;
};
std::string write(const std::vector<Entry>& entries);
std::vector<Entry> read(std::string_view archive);
}  // namespace tar

}  // namespace tedi
