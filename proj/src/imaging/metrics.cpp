#include <array>
#include <cmath>

#include "meshalign/imaging.hpp"

namespace meshalign {

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const char* op, const Image& a, const Image& b, const Mask& mask) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeError(std::string(op) + ": image shapes differ");
  }
  if (mask.height != a.height || mask.width != a.width) {
    throw ShapeError(std::string(op) + ": mask extent differs from image");
  }
  if (mask.count() == 0) throw std::invalid_argument(std::string(op) + ": empty mask");
}

std::array<double, 2 * kSsimRadius + 1> gaussian_taps() {
  std::array<double, 2 * kSsimRadius + 1> taps{};
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i)
    taps[i + kSsimRadius] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
  return taps;
}

// Separable truncated Gaussian filter: out(y,x) = sum_{in-bounds} g(dy) g(dx) v.
std::vector<double> filter(const std::vector<double>& v, std::size_t h, std::size_t w) {
  static const auto taps = gaussian_taps();
  std::vector<double> rows(h * w, 0.0), out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
        const long xx = static_cast<long>(x) + d;
        if (xx >= 0 && xx < static_cast<long>(w)) acc += taps[d + kSsimRadius] * v[y * w + xx];
      }
      rows[y * w + x] = acc;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -kSsimRadius; d <= kSsimRadius; ++d) {
        const long yy = static_cast<long>(y) + d;
        if (yy >= 0 && yy < static_cast<long>(h)) acc += taps[d + kSsimRadius] * rows[yy * w + x];
      }
      out[y * w + x] = acc;
    }
  return out;
}

}  // namespace

double psnr_masked(const Image& a, const Image& b, const Mask& mask) {
  check_pair("psnr_masked", a, b, mask);
  const std::size_t n = a.pixels();
  double sse = 0.0;
  for (std::size_t c = 0; c < a.channels; ++c)
    for (std::size_t i = 0; i < n; ++i)
      if (mask.values[i] == 1.0) {
        const double d = a.values[c * n + i] - b.values[c * n + i];
        sse += d * d;
      }
  const double mse = sse / static_cast<double>(mask.count() * a.channels);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<double> ssim_map(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw ShapeError("ssim_map: image shapes differ");
  }
  const Image la = to_luma(a), lb = to_luma(b);
  const std::size_t h = a.height, w = a.width, n = h * w;
  std::vector<double> aa(n), bb(n), ab(n), ones(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = la.values[i] * la.values[i];
    bb[i] = lb.values[i] * lb.values[i];
    ab[i] = la.values[i] * lb.values[i];
  }
  const auto norm = filter(ones, h, w);
  const auto sa = filter(la.values, h, w), sb = filter(lb.values, h, w);
  const auto saa = filter(aa, h, w), sbb = filter(bb, h, w), sab = filter(ab, h, w);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mu_a = sa[i] / norm[i], mu_b = sb[i] / norm[i];
    const double var_a = saa[i] / norm[i] - mu_a * mu_a;
    const double var_b = sbb[i] / norm[i] - mu_b * mu_b;
    const double cov = sab[i] / norm[i] - mu_a * mu_b;
    const double num = (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2);
    const double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
    out[i] = num / den;
  }
  return out;
}

double ssim_masked(const Image& a, const Image& b, const Mask& mask) {
  check_pair("ssim_masked", a, b, mask);
  const auto map = ssim_map(a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i)
    if (mask.values[i] == 1.0) total += map[i];
  return total / static_cast<double>(mask.count());
}

}  // namespace meshalign
