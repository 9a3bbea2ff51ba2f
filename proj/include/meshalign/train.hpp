#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "meshalign/config.hpp"
#include "meshalign/losses.hpp"
#include "meshalign/model.hpp"
#include "meshalign/synth.hpp"

namespace meshalign {

/// Adam with bias correction.
struct Adam {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t steps = 0;
  std::vector<NdArray> m, v;

  void reset(const ParameterSet& params);
  void step(ParameterSet& params, const std::vector<NdArray>& grads);
};

struct TrainState {
  TrainConfig config;
  AlignModel model;
  Adam optimizer;
  std::size_t step = 0;
  std::mt19937_64 rng;
};

TrainState init_training(const TrainConfig& config);

/// One prepared training sample: image arrays plus the reference JND map.
struct PreparedSample {
  NdArray ref, tar;
  Image jnd;
};

std::vector<PreparedSample> prepare(const Dataset& data);

/// Forward and loss of one pair on a fresh tape; gradients are written to
/// `grads` (one per parameter) when non-null.
LossBreakdown sample_loss(const AlignModel& model, const LossWeights& weights,
                          const PreparedSample& sample, std::vector<NdArray>* grads);

/// Draws a batch from state.rng, averages losses and gradients over it in
/// draw order, and applies one Adam update. Throws NonFiniteError on NaN/Inf.
LossBreakdown train_step(TrainState& state, const std::vector<PreparedSample>& data);

using StepCallback = std::function<void(std::size_t step, const LossBreakdown& loss)>;

/// Runs until state.step reaches config.total_steps(data.size()). Writes the
/// CSV log and periodic checkpoints when the config names them.
void train(TrainState& state, const std::vector<PreparedSample>& data,
           const StepCallback& on_step = {});

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, std::size_t step, const LossBreakdown& loss);

// ---- checkpoints ---------------------------------------------------------

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kCheckpointVersion = 1;

/// Layout: uint64 little-endian header length, JSON header, then raw
/// little-endian doubles for every parameter, Adam m and Adam v in header order.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace meshalign
