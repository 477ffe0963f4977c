#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tedi/tensor.hpp"

namespace tedi {

/// Real-valued image, stored channel-major (C x H x W). Color images use
/// the [-1, 1] range; sketches are single-channel edge strengths in [0, 1].
class Image {
public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const Image& a, const Image& b) = default;

private:
  int channels_ = 0, height_ = 0, width_ = 0;
  std::vector<double> data_;
};

/// Stacks equally sized images into an (N, C, H, W) tensor.
Tensor images_to_tensor(std::span<const Image> images);
/// Splits an (N, C, H, W) tensor into images.
std::vector<Image> tensor_to_images(const Tensor& batch);
Image tensor_to_image(const Tensor& batch, int index);

// 8-bit codecs. Color: byte p <-> value p / 127.5 - 1. Unit: byte p <-> p / 255.
std::uint8_t quantize_signed(double v);
double dequantize_signed(std::uint8_t p);
std::uint8_t quantize_unit(double v);
double dequantize_unit(std::uint8_t p);

enum class PixelRange { signed_unit, unit };

/// Rounds every value through the 8-bit codec for `range`.
Image quantized(const Image& img, PixelRange range);

std::string encode_png(const Image& img, PixelRange range);
Image decode_png(std::string_view bytes, PixelRange range);
/// Raw 8-bit single-channel PNG (used for label maps).
std::string encode_png_u8(int height, int width, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> decode_png_u8(std::string_view bytes, int& height, int& width);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tedi
