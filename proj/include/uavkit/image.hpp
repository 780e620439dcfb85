#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uavkit/errors.hpp"

namespace uavkit::image {

// Interleaved 8-bit image, channels = 3 (RGB) or 4 (RGBA).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  static Image rgb(int w, int h) { return Image{w, h, 3, std::vector<std::uint8_t>(3u * w * h, 0)}; }
  static Image rgba(int w, int h) { return Image{w, h, 4, std::vector<std::uint8_t>(4u * w * h, 0)}; }

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
};

// RGB images travel as binary PPM (P6); RGBA sprites as PAM (P7, RGB_ALPHA).
void write_image(const std::string& path, const Image& img);
Image read_image(const std::string& path);

Image resize_nearest(const Image& src, int w, int h);

}  // namespace uavkit::image
