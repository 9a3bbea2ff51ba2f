#include <algorithm>
#include <cmath>
#include <string>

#include "meshalign/imaging.hpp"

namespace meshalign {

Image::Image(std::size_t h, std::size_t w, std::size_t c, double fill)
    : height(h), width(w), channels(c), values(h * w * c, fill) {
  if (c != 1 && c != 3) throw std::invalid_argument("Image: channels must be 1 or 3");
}

NdArray Image::to_array() const { return NdArray(Shape{channels, height, width}, values); }

Image Image::from_array(const NdArray& array) {
  if (array.rank() != 3 || (array.dim(0) != 1 && array.dim(0) != 3)) {
    throw ShapeError("Image::from_array: expected [1|3, h, w], got " + to_string(array.shape()));
  }
  Image img(array.dim(1), array.dim(2), array.dim(0));
  for (std::size_t i = 0; i < array.size(); ++i) img.values[i] = std::clamp(array[i], 0.0, 1.0);
  return img;
}

Mask::Mask(std::size_t h, std::size_t w, double fill) : height(h), width(w), values(h * w, fill) {}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), 1.0));
}

Image to_luma(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw std::invalid_argument("to_luma: channels must be 1 or 3");
  Image out(img.height, img.width, 1);
  const std::size_t n = img.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = 0.299 * img.values[i] + 0.587 * img.values[n + i] +
                    0.114 * img.values[2 * n + i];
  }
  return out;
}

Image average_fusion(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeError("average_fusion: image shapes differ");
  }
  Image out(a.height, a.width, a.channels);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    out.values[i] = 0.5 * (a.values[i] + b.values[i]);
  return out;
}

}  // namespace meshalign
