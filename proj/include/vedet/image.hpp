#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "vedet/autograd.hpp"

namespace vedet {

/// 8-bit RGB image, channel-major (CHW).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, 0) {}

  std::uint8_t& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
  bool all_zero() const;
};

/// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);

/// Bilinear resize; pixel centers map as (i + 0.5) / scale - 0.5.
Image resize_bilinear(const Image& img, int new_h, int new_w);
Image crop(const Image& img, int top, int left, int h, int w);
Image flip_horizontal(const Image& img);

/// Stacks images (all the same size) into a (3, N*H*W) matrix scaled to [0, 1].
ag::Mat images_to_matrix(const std::vector<const Image*>& images);

}  // namespace vedet
