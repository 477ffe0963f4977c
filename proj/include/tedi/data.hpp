#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tedi/image.hpp"

namespace tedi::data {

enum class Gender { female = 0, male = 1 };
enum class AgeBucket { young = 0, old = 1 };
enum class HairColor { black = 0, blond = 1, brown = 2 };
enum class HairLength { short_hair = 0, long_hair = 1 };

struct AttributeVector {
  Gender gender = Gender::female;
  AgeBucket age = AgeBucket::young;
  HairColor hair_color = HairColor::black;
  HairLength hair_length = HairLength::short_hair;
  bool smile = false;
  bool glasses = false;
  bool beard = false;

  /// Throws ConfigError when beard is set on a female face.
  void validate() const;
  friend bool operator==(const AttributeVector&, const AttributeVector&) = default;
};

/// Canonical attribute names, in classifier-head order.
inline constexpr std::array<const char*, 7> kAttributeNames = {
    "gender", "age", "hair color", "hair length", "smile", "eye glasses", "beard"};
inline constexpr std::array<int, 7> kAttributeClasses = {2, 2, 3, 2, 2, 2, 2};
constexpr int num_attributes() { return static_cast<int>(kAttributeNames.size()); }

/// Index of an attribute name in kAttributeNames; throws LookupError.
int attribute_index(const std::string& name);
/// Class index of attribute `index` within `attrs`.
int attribute_value(const AttributeVector& attrs, int index);
void set_attribute_value(AttributeVector& attrs, int index, int value);
std::string attribute_value_name(int index, int value);

/// Nuisance variation of a render (pose jitter, tones). Zero means canonical.
struct Nuisance {
  double dx = 0.0, dy = 0.0, scale = 1.0;
  double skin_shift = 0.0;
  double background_shift = 0.0;
  static Nuisance from_seed(std::uint64_t seed);
};

enum Part : std::uint8_t { background = 0, skin = 1, hair = 2, eyes = 3, mouth = 4, glasses = 5 };
inline constexpr int kNumParts = 6;

/// Cartoon face with every attribute visually separable. Deterministic.
Image synth_face(const AttributeVector& attrs, int resolution, std::uint64_t seed);
Image synth_face(const AttributeVector& attrs, int resolution, const Nuisance& nuisance);

/// Axis-aligned pixel box (inclusive) that can change when `smile` toggles.
struct PixelBox {
  int y0, x0, y1, x1;
  bool contains(int y, int x) const { return y >= y0 && y <= y1 && x >= x0 && x <= x1; }
};
PixelBox mouth_region(int resolution, const Nuisance& nuisance);
/// Pixels whose render depends on hair color (hair and beard regions).
std::vector<std::pair<int, int>> hair_pixels(const AttributeVector& attrs, int resolution, const Nuisance& nuisance);

/// Template description mentioning at least two attributes; variants 0..9
/// are pairwise distinct.
std::string caption_from_attributes(const AttributeVector& attrs, int variant);
inline constexpr int kCaptionsPerImage = 10;

/// Edge strength in [0, 1] from a Sobel filter of the luminance.
Image sketch_from_image(const Image& image);

/// Per-pixel part ids.
struct LabelMap {
  int height = 0, width = 0;
  std::vector<std::uint8_t> ids;
  std::uint8_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};
LabelMap label_from_attributes(const AttributeVector& attrs, int resolution, const Nuisance& nuisance = {});
/// One-hot (kNumParts x H x W) encoding used by the label encoder.
Image label_one_hot(const LabelMap& labels);

struct DatasetSample {
  Image image;
  std::array<std::string, kCaptionsPerImage> captions;
  AttributeVector attributes;
  Image sketch;
  LabelMap label_map;
  friend bool operator==(const DatasetSample&, const DatasetSample&) = default;
};

/// Attribute sampling distribution.
struct SamplingConfig {
  double p_male = 0.5;
  double p_old = 0.4;
  std::array<double, 3> hair_color = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double p_long_hair = 0.5;
  double p_smile = 0.5;
  double p_glasses = 0.3;
  double p_beard_given_male = 0.4;
};

AttributeVector sample_attributes(std::uint64_t seed, const SamplingConfig& cfg = {});
/// Deterministic sample number `index` of a dataset seeded with `seed`.
DatasetSample make_sample(std::uint64_t seed, int index, int resolution, const SamplingConfig& cfg = {});

struct DatasetManifest {
  int n = 0;
  int resolution = 0;
  std::uint64_t seed = 0;
  int format_version = 1;
};

/// Writes the directory layout and returns its manifest.
DatasetManifest build_dataset(int n, int resolution, std::uint64_t seed, const std::filesystem::path& out_dir,
                              const SamplingConfig& cfg = {});
std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// In-memory equivalent of build_dataset followed by load_dataset.
std::vector<DatasetSample> generate_samples(int n, int resolution, std::uint64_t seed, int first_index = 0,
                                            const SamplingConfig& cfg = {});

std::string attributes_csv_header();
std::string attributes_csv_row(int index, const AttributeVector& a);

}  // namespace tedi::data
