#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "meshalign/geometry.hpp"
#include "meshalign/imaging.hpp"

namespace meshalign {

enum class Difficulty { Easy, Moderate, Hard };

const char* to_string(Difficulty d);
Difficulty parse_difficulty(const std::string& text);
/// Corner displacement bound d in pixels at 128px: 4, 10, 20.
double displacement_bound(Difficulty d);
/// Bucket for the largest corner displacement component.
Difficulty classify(const GlobalOffsets& offsets);

struct SynthOptions {
  std::size_t size = 128;
  double displacement = 4.0;  // corner offsets uniform in [-d, d]
  bool translation_only = false;
  double field_amplitude = 0.0;  // sinusoidal local displacement, <= 3
  double jitter = 0.05;          // brightness offset uniform in [-j, j]
};

struct SynthPair {
  Image ref, tar;
  GlobalOffsets offsets;  // corner displacements reference -> target
  NdArray flow;           // [size, size, 2]: reference pixel -> target coordinates
  Difficulty difficulty = Difficulty::Easy;
};

/// Margin the source needs around the crop for the given options.
std::size_t required_margin(const SynthOptions& options);

/// I_ref is a random crop of `source`; I_tar(q) samples the source at the
/// inverse of the generating transform. Throws std::invalid_argument if the
/// source is smaller than size + 2 * margin.
SynthPair gen_pair(std::mt19937_64& rng, const Image& source, const SynthOptions& options);

/// Smooth random colour texture (sinusoids and blobs) in [0, 1].
Image procedural_source(std::mt19937_64& rng, std::size_t h, std::size_t w);

struct Sample {
  std::string id;
  Image ref, tar;
  Difficulty difficulty = Difficulty::Easy;
  GlobalOffsets offsets;
};

using Dataset = std::vector<Sample>;

/// Writes ref/tar PPM files plus pairs.csv (id, difficulty, ref, tar, 8 offsets).
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// `count` pairs from procedural sources (or `sources` if nonempty, cycled).
Dataset generate_dataset(std::uint64_t seed, std::size_t count, const SynthOptions& options,
                         const std::vector<Image>& sources = {});

}  // namespace meshalign
