#include "meshalign/jnd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meshalign {

namespace {

using Kernel = int[5][5];

constexpr Kernel kDirections[4] = {
    {{0, 0, 0, 0, 0}, {1, 3, 8, 3, 1}, {0, 0, 0, 0, 0}, {-1, -3, -8, -3, -1}, {0, 0, 0, 0, 0}},
    {{0, 0, 1, 0, 0}, {0, 8, 3, 0, 0}, {1, 3, 0, -3, -1}, {0, 0, -3, -8, 0}, {0, 0, -1, 0, 0}},
    {{0, 0, 1, 0, 0}, {0, 0, 3, 8, 0}, {-1, -3, 0, 3, 1}, {0, -8, -3, 0, 0}, {0, 0, -1, 0, 0}},
    {{0, 1, 0, -1, 0}, {0, 3, 0, -3, 0}, {0, 8, 0, -8, 0}, {0, 3, 0, -3, 0}, {0, 1, 0, -1, 0}},
};

void require_single_channel(const Image& img, const char* op) {
  if (img.channels != 1) throw std::invalid_argument(std::string(op) + ": expected one channel");
}

// Sample at (y, x) with edge replication, scaled to [0,255].
double sample255(const Image& img, long y, long x) {
  y = std::clamp<long>(y, 0, static_cast<long>(img.height) - 1);
  x = std::clamp<long>(x, 0, static_cast<long>(img.width) - 1);
  return img.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) * 255.0;
}

}  // namespace

double luminance_threshold(double background) {
  const double la = background <= 127.0 ? 17.0 * (1.0 - std::sqrt(background / 127.0)) + 3.0
                                        : 3.0 * (background - 127.0) / 128.0 + 3.0;
  return la / 255.0;
}

Image luminance_adaptation(const Image& luma) {
  require_single_channel(luma, "luminance_adaptation");
  Image out(luma.height, luma.width, 1);
  for (long y = 0; y < static_cast<long>(luma.height); ++y)
    for (long x = 0; x < static_cast<long>(luma.width); ++x) {
      double b = 0.0;
      for (long dy = -2; dy <= 2; ++dy)
        for (long dx = -2; dx <= 2; ++dx) b += sample255(luma, y + dy, x + dx);
      out.at(0, y, x) = luminance_threshold(b / 25.0);
    }
  return out;
}

Image contrast_masking(const Image& luma) {
  require_single_channel(luma, "contrast_masking");
  Image out(luma.height, luma.width, 1);
  for (long y = 0; y < static_cast<long>(luma.height); ++y)
    for (long x = 0; x < static_cast<long>(luma.width); ++x) {
      double g = 0.0;
      for (const Kernel& k : kDirections) {
        double r = 0.0;
        for (long i = 0; i < 5; ++i)
          for (long j = 0; j < 5; ++j) r += k[i][j] * sample255(luma, y + i - 2, x + j - 2);
        g = std::max(g, std::abs(r) / 16.0);
      }
      out.at(0, y, x) = 0.115 * std::pow(g, 0.8) / 255.0;
    }
  return out;
}

Image jnd_map(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("jnd_map: expected 1 or 3 channels");
  const Image luma = to_luma(img);
  const Image la = luminance_adaptation(luma), cm = contrast_masking(luma);
  Image out(img.height, img.width, 1);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double a = la.values[i], c = cm.values[i];
    out.values[i] = std::max(0.0, a + c - 0.3 * std::min(a, c));
  }
  return out;
}

}  // namespace meshalign
