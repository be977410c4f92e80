#include "vedet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "vedet/errors.hpp"

namespace vedet {

bool Image::all_zero() const {
  return std::all_of(data.begin(), data.end(), [](std::uint8_t v) { return v == 0; });
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<char> buf(static_cast<std::size_t>(3) * img.height * img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = static_cast<char>(img.at(c, y, x));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError(path.string() + ": header: expected binary P6 with maxval 255");
  }
  in.get();
  std::vector<char> buf(static_cast<std::size_t>(3) * h * w);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw ParseError(path.string() + ": pixel data truncated (" + std::to_string(in.gcount()) +
                     " of " + std::to_string(buf.size()) + " bytes)");
  }
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<std::uint8_t>(buf[(static_cast<std::size_t>(y) * w + x) * 3 + c]);
  return img;
}

Image resize_bilinear(const Image& img, int new_h, int new_w) {
  Image out(new_h, new_w);
  const double sy = static_cast<double>(new_h) / img.height;
  const double sx = static_cast<double>(new_w) / img.width;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::clamp((y + 0.5) / sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::clamp((x + 0.5) / sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - ty) * ((1 - tx) * img.at(c, y0, x0) + tx * img.at(c, y0, x1)) +
                         ty * ((1 - tx) * img.at(c, y1, x0) + tx * img.at(c, y1, x1));
        out.at(c, y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Image crop(const Image& img, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || top + h > img.height || left + w > img.width) {
    throw ConfigError("crop window outside the image");
  }
  Image out(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

ag::Mat images_to_matrix(const std::vector<const Image*>& images) {
  if (images.empty()) throw StructuralError("no images to stack");
  const int h = images[0]->height, w = images[0]->width;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  ag::Mat m(3, hw * static_cast<Eigen::Index>(images.size()));
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.height != h || img.width != w) throw StructuralError("images differ in size");
    for (int c = 0; c < 3; ++c)
      for (Eigen::Index i = 0; i < hw; ++i)
        m(c, static_cast<Eigen::Index>(n) * hw + i) =
            img.data[static_cast<std::size_t>(c) * hw + i] / 255.0;
  }
  return m;
}

}  // namespace vedet
