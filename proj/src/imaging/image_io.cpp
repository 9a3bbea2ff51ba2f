#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "meshalign/imaging.hpp"

namespace meshalign {

namespace {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open image: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string netpbm_token(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#')
    token.push_back(static_cast<char>(bytes[pos++]));
  return token;
}

std::size_t parse_extent(const std::string& token, const std::string& what) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), ::isdigit)) {
    throw ImageIoError("corrupt netpbm header: bad " + what + " '" + token + "'");
  }
  return std::stoul(token);
}

Image decode_netpbm(const std::vector<unsigned char>& bytes, const std::string& name) {
  std::size_t pos = 0;
  const std::string magic = netpbm_token(bytes, pos);
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t width = parse_extent(netpbm_token(bytes, pos), "width");
  const std::size_t height = parse_extent(netpbm_token(bytes, pos), "height");
  const std::size_t maxval = parse_extent(netpbm_token(bytes, pos), "maxval");
  if (width == 0 || height == 0) throw ImageIoError("empty image: " + name);
  if (maxval == 0 || maxval > 255) throw ImageIoError("unsupported netpbm maxval in " + name);
  ++pos;  // single whitespace before the raster
  const std::size_t n = width * height * channels;
  if (bytes.size() < pos + n) throw ImageIoError("truncated netpbm raster: " + name);
  Image img(height, width, channels);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) =
            std::min(1.0, bytes[pos + (y * width + x) * channels + c] * scale);
  return img;
}

Image decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageIoError("corrupt PNG " + name + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<unsigned char> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageIoError("corrupt PNG " + name + ": " + image.message);
  }
  Image img(image.height, image.width, channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) = raster[(y * img.width + x) * channels + c] / 255.0;
  return img;
}

std::vector<unsigned char> interleave(const Image& img) {
  std::vector<unsigned char> out(img.values.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        out[(y * img.width + x) * img.channels + c] = quantize(img.at(c, y, x));
  return out;
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const std::string name = path.string();
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_netpbm(bytes, name);
  throw ImageIoError("unsupported image format: " + name);
}

void save_image(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ImageIoError("save_image: bad channel count");
  const std::string ext = lower_extension(path);
  const auto raster = interleave(img);
  if (ext == ".png") {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, raster.data(), 0, nullptr)) {
      throw ImageIoError("cannot write PNG " + path.string() + ": " + image.message);
    }
    return;
  }
  if (ext != ".ppm" && ext != ".pgm" && ext != ".pnm") {
    throw ImageIoError("unsupported output format: " + path.string());
  }
  if (ext == ".ppm" && img.channels != 3) throw ImageIoError("PPM output needs 3 channels");
  if (ext == ".pgm" && img.channels != 1) throw ImageIoError("PGM output needs 1 channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot open for writing: " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << '\n'
      << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.data()),
            static_cast<std::streamsize>(raster.size()));
  if (!out) throw ImageIoError("write failed: " + path.string());
}

}  // namespace meshalign
