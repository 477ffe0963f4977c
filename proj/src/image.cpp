#include "tedi/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tedi/error.hpp"

namespace tedi {

Image::Image(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width),
      data_(static_cast<std::size_t>(channels) * height * width, fill) {}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const Image& f = images.front();
  Tensor t({static_cast<int>(images.size()), f.channels(), f.height(), f.width()});
  std::size_t off = 0;
  for (const auto& img : images) {
    if (img.channels() != f.channels() || img.height() != f.height() || img.width() != f.width())
      throw ShapeError("images_to_tensor: images differ in shape");
    std::copy(img.values().begin(), img.values().end(), t.ptr() + off);
    off += img.size();
  }
  return t;
}

Image tensor_to_image(const Tensor& batch, int index) {
  if (batch.rank() != 4) throw ShapeError("tensor_to_image expects (N, C, H, W), got " + shape_str(batch.shape()));
  Image img(batch.dim(1), batch.dim(2), batch.dim(3));
  std::copy_n(batch.ptr() + static_cast<std::size_t>(index) * img.size(), img.size(), img.values().begin());
  return img;
}

std::vector<Image> tensor_to_images(const Tensor& batch) {
  std::vector<Image> out;
  for (int i = 0; i < batch.dim(0); ++i) out.push_back(tensor_to_image(batch, i));
  return out;
}

std::uint8_t quantize_signed(double v) {
  const double p = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(p);
}
double dequantize_signed(std::uint8_t p) { return p / 127.5 - 1.0; }
std::uint8_t quantize_unit(double v) { return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 1.0) * 255.0)); }
double dequantize_unit(std::uint8_t p) { return p / 255.0; }

Image quantized(const Image& img, PixelRange range) {
  Image out = img;
  for (auto& v : out.values())
    v = range == PixelRange::signed_unit ? dequantize_signed(quantize_signed(v)) : dequantize_unit(quantize_unit(v));
  return out;
}

namespace {

struct ReadState {
  std::string_view data;
  std::size_t offset = 0;
};

void png_write_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}
void png_flush_noop(png_structp) {}

void png_read_from_view(png_structp png, png_bytep data, png_size_t length) {
  auto* st = static_cast<ReadState*>(png_get_io_ptr(png));
  if (st->offset + length > st->data.size()) png_error(png, "truncated data");
  std::memcpy(data, st->data.data() + st->offset, length);
  st->offset += length;
}

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<std::string*>(png_get_error_ptr(png));
  if (sink) *sink = msg;
  png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

std::string encode_raw(int height, int width, int channels, const std::vector<std::uint8_t>& interleaved) {
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : channels == 3 ? PNG_COLOR_TYPE_RGB : -1;
  if (color < 0) throw ShapeError("PNG encoding supports 1 or 3 channels");
  std::string message;
  std::string out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ParseError("PNG encode: " + message);
  }
  {
    png_set_write_fn(png, &out, png_write_to_string, png_flush_noop);
    png_set_IHDR(png, info, width, height, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
      png_write_row(png, const_cast<png_bytep>(interleaved.data() + static_cast<std::size_t>(y) * width * channels));
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> decode_raw(std::string_view bytes, int& height, int& width, int& channels) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8))
    throw ParseError("not a PNG file");
  std::string message;
  std::vector<std::uint8_t> out;
  ReadState st{bytes, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError("PNG decode: " + message);
  }
  {
    png_set_read_fn(png, &st, png_read_from_view);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_expand(png);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    png_read_update_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    channels = png_get_channels(png, info);
    out.resize(static_cast<std::size_t>(width) * height * channels);
    for (int y = 0; y < height; ++y) png_read_row(png, out.data() + static_cast<std::size_t>(y) * width * channels, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

std::string encode_png(const Image& img, PixelRange range) {
  std::vector<std::uint8_t> buf(img.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        const double v = img.at(c, y, x);
        buf[(static_cast<std::size_t>(y) * img.width() + x) * img.channels() + c] =
            range == PixelRange::signed_unit ? quantize_signed(v) : quantize_unit(v);
      }
  return encode_raw(img.height(), img.width(), img.channels(), buf);
}

Image decode_png(std::string_view bytes, PixelRange range) {
  int h = 0, w = 0, c = 0;
  auto buf = decode_raw(bytes, h, w, c);
  Image img(c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const std::uint8_t p = buf[(static_cast<std::size_t>(y) * w + x) * c + ch];
        img.at(ch, y, x) = range == PixelRange::signed_unit ? dequantize_signed(p) : dequantize_unit(p);
      }
  return img;
}

std::string encode_png_u8(int height, int width, std::span<const std::uint8_t> values) {
  return encode_raw(height, width, 1, std::vector<std::uint8_t>(values.begin(), values.end()));
}

std::vector<std::uint8_t> decode_png_u8(std::string_view bytes, int& height, int& width) {
  int c = 0;
  auto buf = decode_raw(bytes, height, width, c);
  if (c != 1) throw ParseError("expected a single-channel PNG");
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace tedi
