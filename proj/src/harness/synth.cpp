#include "meshalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace meshalign {

const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Moderate: return "moderate";
    case Difficulty::Hard: return "hard";
  }
  return "?";
}

Difficulty parse_difficulty(const std::string& text) {
  if (text == "easy") return Difficulty::Easy;
  if (text == "moderate") return Difficulty::Moderate;
  if (text == "hard") return Difficulty::Hard;
  throw std::invalid_argument("unknown difficulty '" + text + "'");
}

double displacement_bound(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return 4.0;
    case Difficulty::Moderate: return 10.0;
    case Difficulty::Hard: return 20.0;
  }
  return 0.0;
}

Difficulty classify(const GlobalOffsets& offsets) {
  double m = 0.0;
  for (double v : offsets.values) m = std::max(m, std::abs(v));
  if (m <= displacement_bound(Difficulty::Easy)) return Difficulty::Easy;
  if (m <= displacement_bound(Difficulty::Moderate)) return Difficulty::Moderate;
  return Difficulty::Hard;
}

namespace {

double bilinear(const Image& img, std::size_t c, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](long yy, long xx) {
    yy = std::clamp<long>(yy, 0, static_cast<long>(img.height) - 1);
    xx = std::clamp<long>(xx, 0, static_cast<long>(img.width) - 1);
    return img.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
  };
  const double top = px(y0, x0) * (1.0 - ax) + px(y0, x0 + 1) * ax;
  const double bottom = px(y0 + 1, x0) * (1.0 - ax) + px(y0 + 1, x0 + 1) * ax;
  return top * (1.0 - ay) + bottom * ay;
}

struct Field {
  double ax = 0, ay = 0, kx = 0, ky = 0, px = 0, py = 0;
  std::array<double, 2> at(double x, double y) const {
    return {ax * std::sin(kx * y + px), ay * std::sin(ky * x + py)};
  }
};

}  // namespace

std::size_t required_margin(const SynthOptions& o) {
  return static_cast<std::size_t>(std::ceil(1.5 * o.displacement + o.field_amplitude)) + 2;
}

SynthPair gen_pair(std::mt19937_64& rng, const Image& source, const SynthOptions& o) {
  if (o.field_amplitude < 0.0 || o.field_amplitude > 3.0)
    throw std::invalid_argument("gen_pair: field amplitude must lie in [0, 3]");
  const std::size_t n = o.size, margin = required_margin(o);
  if (source.height < n + 2 * margin || source.width < n + 2 * margin)
    throw std::invalid_argument("gen_pair: source " + std::to_string(source.width) + "x" +
                                std::to_string(source.height) + " smaller than " +
                                std::to_string(n + 2 * margin) + " pixels square");
  std::uniform_int_distribution<std::size_t> oy(margin, source.height - n - margin);
  std::uniform_int_distribution<std::size_t> ox(margin, source.width - n - margin);
  const double y0 = static_cast<double>(oy(rng)), x0 = static_cast<double>(ox(rng));

  SynthPair pair;
  std::uniform_real_distribution<double> offset(-o.displacement, o.displacement);
  if (o.translation_only) {
    const double dx = offset(rng), dy = offset(rng);
    for (std::size_t i = 0; i < 4; ++i) {
      pair.offsets.values[2 * i] = dx;
      pair.offsets.values[2 * i + 1] = dy;
    }
  } else {
    for (double& v : pair.offsets.values) v = offset(rng);
  }
  pair.difficulty = classify(pair.offsets);
  const Homography H = dlt_solve(pair.offsets, n, n);
  const Homography Hinv = H.inverse();

  Field field;
  if (o.field_amplitude > 0.0) {
    std::uniform_real_distribution<double> amp(0.5 * o.field_amplitude, o.field_amplitude);
    std::uniform_real_distribution<double> freq(1.0, 2.0), phase(0.0, 2.0 * std::numbers::pi);
    const double base = 2.0 * std::numbers::pi / static_cast<double>(n);
    field = {amp(rng), amp(rng), base * freq(rng), base * freq(rng), phase(rng), phase(rng)};
  }
  const double brightness = o.jitter > 0.0 ? std::uniform_real_distribution<double>(-o.jitter, o.jitter)(rng) : 0.0;

  const std::size_t channels = source.channels;
  pair.ref = Image(n, n, channels);
  pair.tar = Image(n, n, channels);
  pair.flow = NdArray(Shape{n, n, 2});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t c = 0; c < channels; ++c)
        pair.ref.at(c, y, x) = source.at(c, y + static_cast<std::size_t>(y0), x + static_cast<std::size_t>(x0));
      // source position seen by target pixel q: H^-1(q) + field(q)
      const auto [sx, sy] = Hinv.apply(static_cast<double>(x), static_cast<double>(y));
      const auto d = field.at(static_cast<double>(x), static_cast<double>(y));
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = bilinear(source, c, x0 + sx + d[0], y0 + sy + d[1]) + brightness;
        pair.tar.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
      // reference pixel p lands at q with H^-1(q) + field(q) = p
      auto q = H.apply(static_cast<double>(x), static_cast<double>(y));
      for (int it = 0; it < 50 && o.field_amplitude > 0.0; ++it) {
        const auto f = field.at(q[0], q[1]);
        q = H.apply(static_cast<double>(x) - f[0], static_cast<double>(y) - f[1]);
      }
      pair.flow[(y * n + x) * 2] = q[0];
      pair.flow[(y * n + x) * 2 + 1] = q[1];
    }
  return pair;
}

Image procedural_source(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  Image img(h, w, 3, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  struct Wave {
    double fx, fy, phase, amp[3];
  };
  struct Blob {
    double cx, cy, r, amp[3];
  };
  std::vector<Wave> waves(10);
  for (Wave& wv : waves) {
    const double f = 0.01 + 0.06 * u(rng), a = two_pi * u(rng);
    wv = {f * std::cos(a), f * std::sin(a), two_pi * u(rng), {u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5}};
  }
  std::vector<Blob> blobs(24);
  for (Blob& b : blobs)
    b = {u(rng) * static_cast<double>(w), u(rng) * static_cast<double>(h), 3.0 + 9.0 * u(rng),
         {u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5}};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double v[3] = {0.5, 0.5, 0.5};
      for (const Wave& wv : waves) {
        const double s = std::sin(two_pi * (wv.fx * x + wv.fy * y) + wv.phase);
        for (int c = 0; c < 3; ++c) v[c] += 0.18 * wv.amp[c] * s;
      }
      for (const Blob& b : blobs) {
        const double dx = x - b.cx, dy = y - b.cy;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
        for (int c = 0; c < 3; ++c) v[c] += 0.8 * b.amp[c] * g;
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(v[c], 0.0, 1.0);
    }
  return img;
}

// ---- dataset files ---------------------------------------------------------

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "pairs.csv");
  if (!csv) throw std::runtime_error("cannot write " + (dir / "pairs.csv").string());
  csv << "id,difficulty,ref,tar,dx0,dy0,dx1,dy1,dx2,dy2,dx3,dy3\n";
  csv.precision(17);
  for (const Sample& s : data) {
    const std::string ref = s.id + "_ref.ppm", tar = s.id + "_tar.ppm";
    save_image(s.ref, dir / ref);
    save_image(s.tar, dir / tar);
    csv << s.id << ',' << to_string(s.difficulty) << ',' << ref << ',' << tar;
    for (double v : s.offsets.values) csv << ',' << v;
    csv << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "pairs.csv");
  if (!csv) throw std::runtime_error("cannot open " + (dir / "pairs.csv").string());
  std::string line;
  std::getline(csv, line);
  Dataset data;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 12) throw std::runtime_error("pairs.csv: malformed row '" + line + "'");
    Sample s;
    s.id = cells[0];
    s.difficulty = parse_difficulty(cells[1]);
    s.ref = load_image(dir / cells[2]);
    s.tar = load_image(dir / cells[3]);
    for (std::size_t i = 0; i < 8; ++i) s.offsets.values[i] = std::stod(cells[4 + i]);
    data.push_back(std::move(s));
  }
  return data;
}

Dataset generate_dataset(std::uint64_t seed, std::size_t count, const SynthOptions& options,
                         const std::vector<Image>& sources) {
  std::mt19937_64 rng(seed);
  const std::size_t side = options.size + 2 * required_margin(options) + 8;
  Dataset data;
  for (std::size_t i = 0; i < count; ++i) {
    const Image source = sources.empty() ? procedural_source(rng, side, side) : sources[i % sources.size()];
    SynthPair pair = gen_pair(rng, source, options);
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "%05zu", i);
    s.id = id;
    s.ref = std::move(pair.ref);
    s.tar = std::move(pair.tar);
    s.difficulty = pair.difficulty;
    s.offsets = pair.offsets;
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace meshalign
