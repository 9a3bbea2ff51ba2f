#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "meshalign/correlation.hpp"
#include "meshalign/cross_scale.hpp"
#include "meshalign/geometry.hpp"
#include "meshalign/nn.hpp"

namespace meshalign {

struct ModelConfig {
  std::size_t image_h = 128, image_w = 128, channels = 3;
  std::size_t mesh_rows = 13, mesh_cols = 13;  // U, V
  std::size_t levels = 2;                      // N
  std::size_t fine_channels = 64, coarse_channels = 128;
  std::size_t fine_stride = 4, coarse_stride = 16;
  HeadSpec head;  // shared shape of every regression head
  CorrelationKind correlation = CorrelationKind::Fsc;
  double offset_range = 2.0;  // local offsets span +-range cells per unit output
  std::uint64_t seed = 0;

  std::size_t fine_h() const { return image_h / fine_stride; }
  std::size_t fine_w() const { return image_w / fine_stride; }
  std::size_t coarse_h() const { return image_h / coarse_stride; }
  std::size_t coarse_w() const { return image_w / coarse_stride; }
  std::size_t local_dim() const { return 2 * mesh_rows * mesh_cols; }
  /// Throws std::invalid_argument for inconsistent strides, extents or levels.
  void validate() const;
};

/// Shared conv stack: stride-2 convs down to the fine stride, one stride-1
/// conv for fine features; further stride-2 convs and one stride-1 conv for
/// coarse features.
struct Extractor {
  std::vector<ConvLayer> trunk;
  ConvLayer fine_out;
  std::vector<ConvLayer> coarse;
  ConvLayer coarse_out;
};

struct AlignModel {
  ModelConfig config;
  ParameterSet params;
  Extractor extractor;
  FscHead global_head;
  FscHead intra_head;
  PairHeads cross_heads;
};

/// Parameters drawn from config.seed; every head's last layer starts at zero.
AlignModel make_model(const ModelConfig& config);

struct Features {
  Var fine;
  Var coarse;
};

/// img is [channels, image_h, image_w].
Features extract(const AlignModel& model, const BoundParameters& p, const Var& img);

struct GlobalResult {
  Var offsets;  // [4, 2] pixels
  Var H;        // [3, 3]
  bool degenerate = false;  // H fell back to identity
};

GlobalResult global_stage(const AlignModel& model, const BoundParameters& p,
                          const Var& coarse_ref, const Var& coarse_tar);

struct LocalResult {
  Var intra;  // [U, V, 2] pixels
  Var cross;
  Var total;
  Var warped_features;  // F^w_tar
};

LocalResult local_stage(const AlignModel& model, const BoundParameters& p, const Var& fine_ref,
                        const Var& fine_tar, const Var& H);

struct ForwardOutput {
  Var global_offsets, H;
  Var local_intra, local_cross, local_offsets;
  Var homography_mesh;  // regular mesh under H
  Var final_mesh;       // M^f
  Var warped;           // mesh-stage warp of I_tar
  Mask mask;
  Var warped_h;  // homography-stage warp of I_tar
  Mask mask_h;
  bool degenerate = false;
};

ForwardOutput forward(const AlignModel& model, const BoundParameters& p, const Var& ref,
                      const Var& tar);

}  // namespace meshalign
