#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "meshalign/ndarray.hpp"

namespace meshalign {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Planar (channel-major) image with values in [0, 1]; 1 or 3 channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0);

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return values[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
  std::size_t pixels() const { return height * width; }

  /// [channels, height, width] copy.
  NdArray to_array() const;
  /// Accepts [c, h, w] with c in {1, 3}; values are clamped to [0, 1].
  static Image from_array(const NdArray& array);
};

/// Binary mask with values exactly 0 or 1.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, double fill = 1.0);

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::size_t count() const;
};

/// PNG (8-bit gray/RGB), binary PPM (P6) or PGM (P5). Format is detected from
/// the file contents on load and from the extension on save.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);

/// ITU-R BT.601 luma; single-channel input is returned unchanged.
Image to_luma(const Image& img);

inline constexpr double kPsnrCap = 99.0;

/// PSNR (peak 1.0) over mask == 1 pixels, MSE averaged over all channels.
/// Zero MSE returns kPsnrCap.
double psnr_masked(const Image& a, const Image& b, const Mask& mask);

/// Mean SSIM on luminance over window centres where mask == 1. 11x11
/// Gaussian window (sigma 1.5) truncated at the borders and renormalised;
/// C1 = 0.01^2, C2 = 0.03^2.
double ssim_masked(const Image& a, const Image& b, const Mask& mask);

/// Per-pixel SSIM map on luminance (same window as ssim_masked).
std::vector<double> ssim_map(const Image& a, const Image& b);

Image average_fusion(const Image& a, const Image& b);

}  // namespace meshalign
