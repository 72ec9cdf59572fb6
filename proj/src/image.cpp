#include "falcon/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "falcon/error.hpp"

namespace falcon {

Image::Image(int w, int h, int c, float fill) : width(w), height(h), channels(c) {
  if (w < 0 || h < 0 || (c != 1 && c != 3)) throw InvalidArgument("image: bad shape");
  data.assign(static_cast<std::size_t>(w) * h * c, fill);
}

Image to_luminance(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const float* p = &img.data[i * 3];
    out.data[i] = static_cast<float>(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
  }
  return out;
}

namespace {

// Coverage of destination cell [d0, d1) over source pixels along one axis.
struct Span1D {
  int first = 0;
  std::vector<double> weights;
};

std::vector<Span1D> coverage(int src, int dst) {
  std::vector<Span1D> spans(dst);
  const double ratio = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    const double a = d * ratio;
    const double b = (d + 1) * ratio;
    int s0 = static_cast<int>(std::floor(a));
    int s1 = std::min(src, static_cast<int>(std::ceil(b)));
    spans[d].first = s0;
    for (int s = s0; s < s1; ++s) {
      const double w = std::min<double>(b, s + 1) - std::max<double>(a, s);
      spans[d].weights.push_back(w / ratio);
    }
  }
  return spans;
}

}  // namespace

Image resize(const Image& img, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("resize: target size must be positive");
  if (img.width == width && img.height == height) return img;
  if (width > img.width || height > img.height) {
    // Up-sampling: nearest neighbour on pixel centers.
    Image out(width, height, img.channels);
    for (int y = 0; y < height; ++y) {
      const int sy = std::min(img.height - 1, static_cast<int>((y + 0.5) * img.height / height));
      for (int x = 0; x < width; ++x) {
        const int sx = std::min(img.width - 1, static_cast<int>((x + 0.5) * img.width / width));
        for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(sx, sy, c);
      }
    }
    return out;
  }
  const auto xs = coverage(img.width, width);
  const auto ys = coverage(img.height, height);
  Image out(width, height, img.channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < ys[y].weights.size(); ++j) {
          for (std::size_t i = 0; i < xs[x].weights.size(); ++i) {
            acc += ys[y].weights[j] * xs[x].weights[i] *
                   img.at(xs[x].first + static_cast<int>(i), ys[y].first + static_cast<int>(j), c);
          }
        }
        out.at(x, y, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image threshold(const Image& img, float t) {
  if (img.channels != 1) throw InvalidArgument("threshold: expected a single-channel image");
  Image out(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] > t ? 1.0f : 0.0f;
  return out;
}

std::size_t count_foreground(const Image& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data.begin(), mask.data.end(), [](float v) { return v > 0.5f; }));
}

Image dilate(const Image& mask, int radius) {
  Image tmp(mask.width, mask.height, 1);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      float v = 0.0f;
      for (int dx = -radius; dx <= radius && v == 0.0f; ++dx) {
        const int sx = x + dx;
        if (sx >= 0 && sx < mask.width && mask.at(sx, y) > 0.5f) v = 1.0f;
      }
      tmp.at(x, y) = v;
    }
  }
  Image out(mask.width, mask.height, 1);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      float v = 0.0f;
      for (int dy = -radius; dy <= radius && v == 0.0f; ++dy) {
        const int sy = y + dy;
        if (sy >= 0 && sy < mask.height && tmp.at(x, sy) > 0.5f) v = 1.0f;
      }
      out.at(x, y) = v;
    }
  }
  return out;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0f, 1.0f)));
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw InvalidArgument("pnm: 1 or 3 channels required");
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.data.size());
  for (float v : img.data) out.push_back(to_byte(v));
  return out;
}

Image decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_ws();
    long v = 0;
    int digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9' && digits < 9) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      ++digits;
    }
    if (digits == 0) throw InvalidArgument("pnm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw InvalidArgument("pnm: expected P5 or P6");
  const int channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0 || w > 16384 || h > 16384) throw InvalidArgument("pnm: bad dimensions");
  if (maxval != 255) throw InvalidArgument("pnm: only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw InvalidArgument("pnm: malformed header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - pos < n) throw InvalidArgument("pnm: truncated pixel data");
  Image img(static_cast<int>(w), static_cast<int>(h), channels);
  for (std::size_t i = 0; i < n; ++i) img.data[i] = bytes[pos + i] / 255.0f;
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_pnm(const std::filesystem::path& path, const Image& img) { write_file(path, encode_pnm(img)); }

Image read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }

}  // namespace falcon
