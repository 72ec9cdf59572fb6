#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace falcon {

/// Row-major float image with 1 or 3 interleaved channels, samples in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

/// Rec. 601 luma; single-channel images are returned unchanged.
Image to_luminance(const Image& img);

/// Box-filter (area) resampling. Exact area averaging for integer
/// down-scale factors; general factors use fractional pixel coverage.
Image resize(const Image& img, int width, int height);

/// Binary mask from a single-channel image: 1 where value > threshold.
Image threshold(const Image& img, float t);

/// Number of samples > 0.5 in a single-channel image.
std::size_t count_foreground(const Image& mask);

/// Square (Chebyshev) dilation of a binary mask by `radius` pixels.
Image dilate(const Image& mask, int radius);

/// Quantize a [0,1] sample to 8 bits: round(255 v).
std::uint8_t to_byte(float v);

// P6 (3 channels) and P5 (1 channel), maxval 255.
std::vector<std::uint8_t> encode_pnm(const Image& img);
Image decode_pnm(std::span<const std::uint8_t> bytes);
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace falcon
