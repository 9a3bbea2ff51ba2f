#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meshalign/model.hpp"
#include "meshalign/synth.hpp"

namespace meshalign {

struct Alignment {
  Image warped;
  Mask mask;
  Image fused;  // average of reference and warped target
  Mesh mesh;
};

Alignment align_pair(const AlignModel& model, const Image& ref, const Image& tar);

struct EvalRow {
  std::string id;
  Difficulty difficulty = Difficulty::Easy;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct BucketAverage {
  std::size_t count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<Difficulty, BucketAverage> buckets;  // only non-empty buckets
  BucketAverage overall;
};

/// Masked PSNR/SSIM of every pair, in dataset order. When `fusion_dir` is set,
/// writes <id>_fused.png there.
EvalReport evaluate(const AlignModel& model, const Dataset& data,
                    const std::optional<std::filesystem::path>& fusion_dir = std::nullopt);

/// Same metrics for the unaligned pair (warped = target, full mask).
EvalReport evaluate_identity(const Dataset& data);

EvalReport summarize(std::vector<EvalRow> rows);

/// Header "id,difficulty,psnr,ssim", one row per pair, then one row per
/// bucket and "average" with the bucket name in the id column.
void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace meshalign
