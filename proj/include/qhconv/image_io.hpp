#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace qhconv {

/// 8-bit interleaved image (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c)
      : width(w), height(h), channels(c),
        pixels(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Writes PNG for ".png", binary PGM/PPM for ".pgm"/".ppm"/".pnm".
/// Throws std::runtime_error on I/O failure or unknown extension.
void write_image(const Image& img, const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);

}  // namespace qhconv
