#include "tedi/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>

#include "tedi/error.hpp"
#include "tedi/image.hpp"

namespace tedi {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

namespace tar {
namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(value));
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i]; ++i) {
    if (field[i] == ' ') continue;
    if (field[i] < '0' || field[i] > '7') throw ParseError("checkpoint archive: bad octal field");
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

}  // namespace

std::string write(const std::vector<Entry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (e.name.size() >= 100) throw ConfigError("archive entry name too long: " + e.name);
    char header[kBlock] = {};
    std::memcpy(header, e.name.data(), e.name.size());
    put_octal(header + 100, 8, 0644);
    put_octal(header + 108, 8, 0);
    put_octal(header + 116, 8, 0);
    put_octal(header + 124, 12, e.data.size());
    put_octal(header + 136, 12, 0);  // fixed mtime keeps archives reproducible
    header[156] = '0';
    std::memcpy(header + 257, "ustar", 6);
    std::memcpy(header + 263, "00", 2);
    std::memset(header + 148, ' ', 8);
    unsigned sum = 0;
    for (char c : header) sum += static_cast<unsigned char>(c);
    std::snprintf(header + 148, 8, "%06o", sum);
    header[155] = ' ';
    out.append(header, kBlock);
    out += e.data;
    out.append((kBlock - e.data.size() % kBlock) % kBlock, '\0');
  }
  out.append(2 * kBlock, '\0');
  return out;
}

std::vector<Entry> read(std::string_view archive) {
  std::vector<Entry> entries;
  std::size_t off = 0;
  while (off + kBlock <= archive.size()) {
    const char* h = archive.data() + off;
    if (h[0] == '\0') break;
    char stored[8];
    std::memcpy(stored, h + 148, 8);
    char copy[kBlock];
    std::memcpy(copy, h, kBlock);
    std::memset(copy + 148, ' ', 8);
    unsigned sum = 0;
    for (char c : copy) sum += static_cast<unsigned char>(c);
    if (get_octal(stored, 8) != sum) throw ParseError("checkpoint archive: header checksum mismatch");
    Entry e;
    e.name.assign(h, strnlen(h, 100));
    const std::uint64_t size = get_octal(h + 124, 12);
    off += kBlock;
    if (off + size > archive.size()) throw ParseError("checkpoint archive: truncated entry " + e.name);
    e.data.assign(archive.data() + off, size);
    off += (size + kBlock - 1) / kBlock * kBlock;
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace tar

Checkpoint::Checkpoint(std::string kind) : kind_(std::move(kind)) {}

void Checkpoint::add_tensor(const std::string& name, const Tensor& t) {
  if (has_tensor(name)) throw ConfigError("duplicate checkpoint tensor: " + name);
  Tensor stored = t;
  for (double& v : stored.values()) v = static_cast<float>(v);
  tensors_.emplace_back(name, std::move(stored));
}

void Checkpoint::add_params(const std::string& prefix, const nn::ParamSet& params) {
  for (const auto& [name, var] : params.items()) add_tensor(prefix + name, var.value());
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, _] : tensors_)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors_)
    if (n == name) return t;
  throw LookupError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::load_params(const std::string& prefix, nn::ParamSet& params) const {
  for (const auto& [name, var] : params.items()) {
    const Tensor& src = tensor(prefix + name);
    if (src.shape() != var.value().shape())
      throw ShapeError("checkpoint tensor " + prefix + name + " has shape " + shape_str(src.shape()) +
                       ", model expects " + shape_str(var.value().shape()));
    ag::Var v = var;
    v.mutable_value() = src;
  }
}

nlohmann::json Checkpoint::manifest() const {
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = kind_;
  j["meta"] = meta_;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : tensors_)
    list.push_back({{"name", name}, {"shape", t.shape()}, {"file", "tensors/" + name + ".f32"}, {"dtype", "float32-le"}});
  j["tensors"] = list;
  return j;
}

std::string Checkpoint::to_bytes() const {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  std::vector<tar::Entry> entries;
  entries.push_back({"manifest.json", manifest().dump(2) + "\n"});
  for (const auto& [name, t] : tensors_) {
    std::string raw(t.size() * sizeof(float), '\0');
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      std::memcpy(raw.data() + i * sizeof(float), &f, sizeof(float));
    }
    entries.push_back({"tensors/" + name + ".f32", std::move(raw)});
  }
  return tar::write(entries);
}

Checkpoint Checkpoint::from_bytes(std::string_view bytes) {
  const auto entries = tar::read(bytes);
  if (entries.empty() || entries[0].name != "manifest.json") throw ParseError("checkpoint: manifest.json missing");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(entries[0].data);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what());
  }
  if (j.value("format_version", 0) != kFormatVersion) throw ParseError("checkpoint: unsupported format_version");
  Checkpoint ck(j.at("kind").get<std::string>());
  ck.meta_ = j.at("meta");
  for (const auto& item : j.at("tensors")) {
    const std::string name = item.at("name").get<std::string>();
    const std::string file = item.at("file").get<std::string>();
    const Shape shape = item.at("shape").get<Shape>();
    const tar::Entry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == file) found = &e;
    if (!found) throw ParseError("checkpoint: missing tensor file " + file);
    if (found->data.size() != shape_numel(shape) * sizeof(float))
      throw ParseError("checkpoint: tensor file " + file + " has wrong size");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f;
      std::memcpy(&f, found->data.data() + i * sizeof(float), sizeof(float));
      t[i] = f;
    }
    ck.tensors_.emplace_back(name, std::move(t));
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file(path, to_bytes()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  try {
    return from_bytes(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace tedi
