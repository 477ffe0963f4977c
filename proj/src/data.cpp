#include "tedi/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tedi/error.hpp"
#include "tedi/nn.hpp"

namespace tedi::data {

void AttributeVector::validate() const {
  if (beard && gender != Gender::male) throw ConfigError("beard requires gender=male");
}

int attribute_index(const std::string& name) {
  for (int i = 0; i < num_attributes(); ++i)
    if (name == kAttributeNames[i]) return i;
  std::string known;
  for (const char* n : kAttributeNames) known += std::string(known.empty() ? "" : ", ") + n;
  throw LookupError("unknown attribute '" + name + "' (known: " + known + ")");
}

int attribute_value(const AttributeVector& a, int index) {
  switch (index) {
    case 0: return static_cast<int>(a.gender);
    case 1: return static_cast<int>(a.age);
    case 2: return static_cast<int>(a.hair_color);
    case 3: return static_cast<int>(a.hair_length);
    case 4: return a.smile ? 1 : 0;
    case 5: return a.glasses ? 1 : 0;
    case 6: return a.beard ? 1 : 0;
  }
  throw LookupError("attribute index out of range: " + std::to_string(index));
}

void set_attribute_value(AttributeVector& a, int index, int value) {
  if (index < 0 || index >= num_attributes() || value < 0 || value >= kAttributeClasses[index])
    throw LookupError("attribute value out of range");
  switch (index) {
    case 0: a.gender = static_cast<Gender>(value); break;
    case 1: a.age = static_cast<AgeBucket>(value); break;
    case 2: a.hair_color = static_cast<HairColor>(value); break;
    case 3: a.hair_length = static_cast<HairLength>(value); break;
    case 4: a.smile = value == 1; break;
    case 5: a.glasses = value == 1; break;
    case 6: a.beard = value == 1; break;
  }
}

std::string attribute_value_name(int index, int value) {
  static const std::vector<std::vector<std::string>> names = {
      {"female", "male"}, {"young", "old"}, {"black", "blond", "brown"}, {"short", "long"},
      {"no", "yes"},      {"no", "yes"},    {"no", "yes"}};
  return names.at(static_cast<std::size_t>(index)).at(static_cast<std::size_t>(value));
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackground{0.55, 0.65, 0.80};
constexpr Rgb kEyes{0.10, 0.10, 0.15};
constexpr Rgb kGlasses{0.15, 0.15, 0.45};
constexpr Rgb kLipsFemale{0.85, 0.12, 0.20};
constexpr Rgb kLipsMale{0.80, 0.42, 0.38};
constexpr Rgb kTeeth{0.98, 0.97, 0.94};
constexpr Rgb kBlush{0.97, 0.58, 0.62};

Rgb hair_rgb(HairColor c) {
  switch (c) {
    case HairColor::black: return {0.07, 0.06, 0.06};
    case HairColor::blond: return {0.98, 0.85, 0.35};
    case HairColor::brown: return {0.55, 0.30, 0.12};
  }
  return {0, 0, 0};
}

Rgb skin_rgb(AgeBucket age, double shift) {
  const Rgb base = age == AgeBucket::young ? Rgb{0.98, 0.82, 0.70} : Rgb{0.66, 0.60, 0.56};
  return {base.r + shift, base.g + shift, base.b + shift};
}

double sq(double v) { return v * v; }

bool in_ellipse(double u, double v, double cu, double cv, double ru, double rv) {
  return sq((u - cu) / ru) + sq((v - cv) / rv) <= 1.0;
}

// Open grin: lower half-ellipse below the lip line.
bool smile_mouth(double u, double v) { return v > 0.73 && in_ellipse(u, v, 0.5, 0.73, 0.17, 0.13); }

bool smile_teeth(double u, double v) { return v > 0.745 && in_ellipse(u, v, 0.5, 0.745, 0.12, 0.08); }

bool neutral_mouth(double u, double v) { return std::abs(u - 0.5) < 0.09 && std::abs(v - 0.78) < 0.035; }

// Part and color of the canonical face at normalized point (u, v).
Part shade(const AttributeVector& a, const Nuisance& n, double u, double v, Rgb& color) {
  const double bg = n.background_shift;
  color = {kBackground.r + bg, kBackground.g + bg, kBackground.b + bg};
  Part part = Part::background;
  const Rgb hair = hair_rgb(a.hair_color);

  const bool cap = in_ellipse(u, v, 0.5, 0.47, 0.35, 0.38) && v < 0.62;
  const bool long_hair = a.hair_length == HairLength::long_hair && std::abs(u - 0.5) < 0.37 && v > 0.45 && v < 0.95;
  if (cap || long_hair) {
    color = hair;
    part = Part::hair;
  }
  const double face_ru = a.gender == Gender::male ? 0.30 : 0.24;
  if (!in_ellipse(u, v, 0.5, 0.57, face_ru, 0.30)) return part;

  if (v < 0.40) {
    color = hair;  // fringe
    return Part::hair;
  }
  color = skin_rgb(a.age, n.skin_shift);
  part = Part::skin;

  const bool mouth = a.smile ? smile_mouth(u, v) : neutral_mouth(u, v);
  if (a.beard && v > 0.70 && !mouth) {
    color = {hair.r * 0.75, hair.g * 0.75, hair.b * 0.75};
    part = Part::hair;
  }
  if (a.gender == Gender::female && (in_ellipse(u, v, 0.33, 0.67, 0.065, 0.065) || in_ellipse(u, v, 0.67, 0.67, 0.065, 0.065)))
    color = kBlush;

  for (double eu : {0.40, 0.60}) {
    const double d = std::sqrt(sq(u - eu) + sq(v - 0.53));
    if (d < 0.05) {
      color = kEyes;
      part = Part::eyes;
    }
    if (a.glasses && d > 0.06 && d < 0.105) {
      color = kGlasses;
      part = Part::glasses;
    }
  }
  if (a.glasses && std::abs(v - 0.53) < 0.02 && std::abs(u - 0.5) > 0.19) {
    color = kGlasses;
    part = Part::glasses;
  }
  if (mouth) {
    color = a.smile && smile_teeth(u, v) ? kTeeth : a.gender == Gender::female ? kLipsFemale : kLipsMale;
    part = Part::mouth;
  }
  return part;
}

// Pixel-space point -> canonical normalized coordinates.
void to_canonical(const Nuisance& n, int resolution, double px, double py, double& u, double& v) {
  const double x = px / resolution, y = py / resolution;
  u = (x - 0.5 - n.dx) / n.scale + 0.5;
  v = (y - 0.5 - n.dy) / n.scale + 0.5;
}

double from_canonical(double c, double shift, double scale, int resolution) {
  return ((c - 0.5) * scale + 0.5 + shift) * resolution;
}

constexpr int kSuper = 4;

}  // namespace

Nuisance Nuisance::from_seed(std::uint64_t seed) {
  nn::Rng rng(splitmix64(seed ^ 0x5eedf00dULL));
  Nuisance n;
  n.dx = rng.uniform(-0.03, 0.03);
  n.dy = rng.uniform(-0.03, 0.03);
  n.scale = rng.uniform(0.96, 1.04);
  n.skin_shift = rng.uniform(-0.04, 0.04);
  n.background_shift = rng.uniform(-0.06, 0.06);
  return n;
}

Image synth_face(const AttributeVector& attrs, int resolution, std::uint64_t seed) {
  return synth_face(attrs, resolution, Nuisance::from_seed(seed));
}

Image synth_face(const AttributeVector& attrs, int resolution, const Nuisance& nuisance) {
  attrs.validate();
  if (resolution < 4) throw InvalidResolution("render resolution too small: " + std::to_string(resolution));
  Image img(3, resolution, resolution);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          double u, v;
          to_canonical(nuisance, resolution, x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper, u, v);
          Rgb c;
          shade(attrs, nuisance, u, v, c);
          acc.r += c.r;
          acc.g += c.g;
          acc.b += c.b;
        }
      const double inv = 1.0 / (kSuper * kSuper);
      img.at(0, y, x) = std::clamp(2.0 * acc.r * inv - 1.0, -1.0, 1.0);
      img.at(1, y, x) = std::clamp(2.0 * acc.g * inv - 1.0, -1.0, 1.0);
      img.at(2, y, x) = std::clamp(2.0 * acc.b * inv - 1.0, -1.0, 1.0);
    }
  return img;
}

PixelBox mouth_region(int resolution, const Nuisance& n) {
  // Union of both mouth shapes in canonical coordinates.
  const double u0 = 0.33, u1 = 0.67, v0 = 0.73, v1 = 0.86;
  auto lo = [&](double c, double shift) { return static_cast<int>(std::floor(from_canonical(c, shift, n.scale, resolution))); };
  auto hi = [&](double c, double shift) { return static_cast<int>(std::ceil(from_canonical(c, shift, n.scale, resolution))) - 1; };
  PixelBox b{lo(v0, n.dy), lo(u0, n.dx), hi(v1, n.dy), hi(u1, n.dx)};
  b.y0 = std::max(b.y0, 0);
  b.x0 = std::max(b.x0, 0);
  b.y1 = std::min(b.y1, resolution - 1);
  b.x1 = std::min(b.x1, resolution - 1);
  return b;
}

std::vector<std::pair<int, int>> hair_pixels(const AttributeVector& attrs, int resolution, const Nuisance& nuisance) {
  const LabelMap lm = label_from_attributes(attrs, resolution, nuisance);
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x)
      if (lm.at(y, x) == Part::hair) out.emplace_back(y, x);
  return out;
}

LabelMap label_from_attributes(const AttributeVector& attrs, int resolution, const Nuisance& nuisance) {
  attrs.validate();
  LabelMap lm{resolution, resolution, std::vector<std::uint8_t>(static_cast<std::size_t>(resolution) * resolution)};
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      double u, v;
      to_canonical(nuisance, resolution, x + 0.5, y + 0.5, u, v);
      Rgb c;
      lm.ids[static_cast<std::size_t>(y) * resolution + x] = shade(attrs, nuisance, u, v, c);
    }
  return lm;
}

Image label_one_hot(const LabelMap& labels) {
  Image img(kNumParts, labels.height, labels.width);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) img.at(labels.at(y, x), y, x) = 1.0;
  return img;
}

Image sketch_from_image(const Image& image) {
  const int h = image.height(), w = image.width();
  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double l = image.at(0, y, x);
      if (image.channels() >= 3) l = 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
      lum[static_cast<std::size_t>(y) * w + x] = l;
    }
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return lum[static_cast<std::size_t>(y) * w + x];
  };
  Image sketch(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      sketch.at(0, y, x) = std::clamp((m - 0.3) / 1.5, 0.0, 1.0);
    }
  return sketch;
}

namespace {

struct Words {
  std::string noun, pronoun, possessive, age, article, color, length;
};

Words words_for(const AttributeVector& a) {
  Words w;
  const bool male = a.gender == Gender::male;
  w.noun = male ? "man" : "woman";
  w.pronoun = male ? "he" : "she";
  w.possessive = male ? "his" : "her";
  w.age = a.age == AgeBucket::young ? "young" : "old";
  w.article = a.age == AgeBucket::young ? "a" : "an";
  switch (a.hair_color) {
    case HairColor::black: w.color = "black"; break;
    case HairColor::blond: w.color = "blonde"; break;
    case HairColor::brown: w.color = "brown"; break;
  }
  w.length = a.hair_length == HairLength::short_hair ? "short" : "long";
  return w;
}

}  // namespace

std::string caption_from_attributes(const AttributeVector& a, int variant) {
  if (variant < 0 || variant >= kCaptionsPerImage)
    throw ConfigError("caption variant out of range: " + std::to_string(variant));
  a.validate();
  const Words w = words_for(a);
  switch (variant) {
    case 0:
      if (a.beard) return w.pronoun + " is " + w.age + " and wears beard";
      return (a.smile ? "a smiling " + w.age : w.article + " " + w.age) + " " + w.noun + " with " + w.length + " " +
             w.color + " hair" + (a.glasses ? " and eyeglasses" : "");
    case 1: return "this " + w.noun + " has " + w.color + " hair and is " + (a.smile ? "smiling" : "not smiling");
    case 2: return w.pronoun + " has " + w.length + " hair and " + (a.glasses ? "wears eyeglasses" : "no eyeglasses");
    case 3: return "the " + w.age + " " + w.noun + " is " + (a.smile ? "smiling" : "not smiling");
    case 4: return w.possessive + " hair is " + w.length + " and " + w.color;
    case 5:
      return "a photo of a " + w.noun +
             (a.beard ? " with a beard" : a.glasses ? " wearing eyeglasses" : " with " + w.color + " hair");
    case 6: return w.article + " " + w.age + " person with " + w.color + " hair" + (a.glasses ? " wearing eyeglasses" : "");
    case 7: return w.pronoun + (a.glasses ? " is" : " is not") + " wearing eyeglasses and has " + w.color + " hair";
    case 8: return "this person is " + w.age + " and has " + w.length + " hair" + (a.beard ? " and a beard" : "");
    case 9: return "the " + w.noun + " has " + w.length + " " + w.color + " hair and " + (a.smile ? "smiles" : "does not smile");
  }
  return {};
}

AttributeVector sample_attributes(std::uint64_t seed, const SamplingConfig& cfg) {
  nn::Rng rng(splitmix64(seed));
  AttributeVector a;
  a.gender = rng.bernoulli(cfg.p_male) ? Gender::male : Gender::female;
  a.age = rng.bernoulli(cfg.p_old) ? AgeBucket::old : AgeBucket::young;
  const double r = rng.uniform();
  a.hair_color = r < cfg.hair_color[0] ? HairColor::black
                 : r < cfg.hair_color[0] + cfg.hair_color[1] ? HairColor::blond
                                                             : HairColor::brown;
  a.hair_length = rng.bernoulli(cfg.p_long_hair) ? HairLength::long_hair : HairLength::short_hair;
  a.smile = rng.bernoulli(cfg.p_smile);
  a.glasses = rng.bernoulli(cfg.p_glasses);
  const bool beard_draw = rng.bernoulli(cfg.p_beard_given_male);
  a.beard = a.gender == Gender::male && beard_draw;
  return a;
}

DatasetSample make_sample(std::uint64_t seed, int index, int resolution, const SamplingConfig& cfg) {
  const std::uint64_t s = splitmix64(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(index));
  DatasetSample sample;
  sample.attributes = sample_attributes(s, cfg);
  const Nuisance nuisance = Nuisance::from_seed(s);
  sample.image = quantized(synth_face(sample.attributes, resolution, nuisance), PixelRange::signed_unit);
  sample.sketch = quantized(sketch_from_image(sample.image), PixelRange::unit);
  sample.label_map = label_from_attributes(sample.attributes, resolution, nuisance);
  for (int v = 0; v < kCaptionsPerImage; ++v) sample.captions[v] = caption_from_attributes(sample.attributes, v);
  return sample;
}

std::vector<DatasetSample> generate_samples(int n, int resolution, std::uint64_t seed, int first_index,
                                            const SamplingConfig& cfg) {
  std::vector<DatasetSample> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) out.push_back(make_sample(seed, first_index + i, resolution, cfg));
  return out;
}

std::string attributes_csv_header() { return "index,gender,age,hair_color,hair_length,smile,glasses,beard"; }

std::string attributes_csv_row(int index, const AttributeVector& a) {
  std::string row = std::to_string(index);
  for (int k = 0; k < num_attributes(); ++k) row += "," + attribute_value_name(k, attribute_value(a, k));
  return row;
}

namespace {

std::string stem(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return buf;
}

std::string read_named(const std::filesystem::path& dir, const std::string& rel) {
  const auto p = dir / rel;
  if (!std::filesystem::exists(p)) throw ParseError("missing file: " + rel);
  return read_file(p);
}

AttributeVector parse_attribute_row(const std::string& line, int expected_index) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (static_cast<int>(cells.size()) != 1 + num_attributes() || cells[0] != std::to_string(expected_index))
    throw ParseError("attributes.csv: malformed row for index " + std::to_string(expected_index));
  AttributeVector a;
  for (int k = 0; k < num_attributes(); ++k) {
    int value = -1;
    for (int v = 0; v < kAttributeClasses[k]; ++v)
      if (attribute_value_name(k, v) == cells[k + 1]) value = v;
    if (value < 0) throw ParseError("attributes.csv: bad value '" + cells[k + 1] + "' for " + kAttributeNames[k]);
    set_attribute_value(a, k, value);
  }
  return a;
}

}  // namespace

DatasetManifest build_dataset(int n, int resolution, std::uint64_t seed, const std::filesystem::path& out_dir,
                              const SamplingConfig& cfg) {
  if (n < 1) throw ConfigError("dataset size must be >= 1");
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "captions", "sketches", "labels"}) fs::create_directories(out_dir / sub);
  std::string csv = attributes_csv_header() + "\n";
  for (int i = 0; i < n; ++i) {
    const DatasetSample s = make_sample(seed, i, resolution, cfg);
    const std::string id = stem(i);
    write_file(out_dir / "images" / (id + ".png"), encode_png(s.image, PixelRange::signed_unit));
    write_file(out_dir / "sketches" / (id + ".png"), encode_png(s.sketch, PixelRange::unit));
    write_file(out_dir / "labels" / (id + ".png"), encode_png_u8(s.label_map.height, s.label_map.width, s.label_map.ids));
    std::string caps;
    for (const auto& c : s.captions) caps += c + "\n";
    write_file(out_dir / "captions" / (id + ".txt"), caps);
    csv += attributes_csv_row(i, s.attributes) + "\n";
  }
  write_file(out_dir / "attributes.csv", csv);
  DatasetManifest m{n, resolution, seed, 1};
  nlohmann::json j = {{"n", m.n}, {"resolution", m.resolution}, {"seed", m.seed}, {"format_version", m.format_version}};
  write_file(out_dir / "manifest.json", j.dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const std::string text = read_named(dir, "manifest.json");
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.n = j.at("n").get<int>();
    m.resolution = j.at("resolution").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != 1) throw ParseError("manifest.json: unsupported format_version");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
}

std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::stringstream csv(read_named(dir, "attributes.csv"));
  std::string line;
  std::getline(csv, line);
  if (line != attributes_csv_header()) throw ParseError("attributes.csv: unexpected header");
  std::vector<DatasetSample> out;
  out.reserve(static_cast<std::size_t>(m.n));
  for (int i = 0; i < m.n; ++i) {
    const std::string id = stem(i);
    DatasetSample s;
    if (!std::getline(csv, line)) throw ParseError("attributes.csv: missing row " + std::to_string(i));
    s.attributes = parse_attribute_row(line, i);

    const std::string img_rel = "images/" + id + ".png";
    try {
      s.image = decode_png(read_named(dir, img_rel), PixelRange::signed_unit);
    } catch (const ParseError& e) {
      throw ParseError(img_rel + ": " + e.what());
    }
    const std::string sk_rel = "sketches/" + id + ".png";
    try {
      s.sketch = decode_png(read_named(dir, sk_rel), PixelRange::unit);
    } catch (const ParseError& e) {
      throw ParseError(sk_rel + ": " + e.what());
    }
    const std::string lb_rel = "labels/" + id + ".png";
    try {
      s.label_map.ids = decode_png_u8(read_named(dir, lb_rel), s.label_map.height, s.label_map.width);
    } catch (const ParseError& e) {
      throw ParseError(lb_rel + ": " + e.what());
    }
    if (s.image.channels() != 3 || s.image.height() != m.resolution || s.image.width() != m.resolution)
      throw ParseError(img_rel + ": expected " + std::to_string(m.resolution) + "x" + std::to_string(m.resolution) + " RGB");
    if (s.sketch.channels() != 1 || s.sketch.height() != m.resolution)
      throw ParseError(sk_rel + ": expected single-channel sketch at dataset resolution");
    if (s.label_map.height != m.resolution || s.label_map.width != m.resolution)
      throw ParseError(lb_rel + ": label map size mismatch");
    for (auto id_value : s.label_map.ids)
      if (id_value >= kNumParts) throw ParseError(lb_rel + ": part id out of range");

    const std::string cap_rel = "captions/" + id + ".txt";
    std::stringstream caps(read_named(dir, cap_rel));
    int k = 0;
    while (std::getline(caps, line)) {
      if (line.empty()) continue;
      if (k >= kCaptionsPerImage) throw ParseError(cap_rel + ": more than ten captions");
      s.captions[static_cast<std::size_t>(k++)] = line;
    }
    if (k != kCaptionsPerImage) throw ParseError(cap_rel + ": expected ten captions, found " + std::to_string(k));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tedi::data
