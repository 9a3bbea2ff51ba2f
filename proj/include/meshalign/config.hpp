#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "meshalign/losses.hpp"
#include "meshalign/model.hpp"

namespace meshalign {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;
  double learning_rate = 1e-4;
  std::size_t batch_size = 4;
  std::size_t steps = 2000;
  std::size_t epochs = 0;  // when nonzero, overrides steps: epochs * ceil(pairs / batch)
  std::string data_dir;
  std::string checkpoint;
  std::string log;
  std::size_t checkpoint_every = 0;

  /// Total optimizer steps for a dataset of `pairs` samples.
  std::size_t total_steps(std::size_t pairs) const;
};

/// Flat key=value text; '#' starts a comment. Unknown keys, repeated keys and
/// malformed values raise ConfigError naming the line.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

/// Every key with its current value, in a stable order; parse_config of the
/// result reproduces the config.
std::map<std::string, std::string> config_entries(const TrainConfig& config);
std::string to_text(const TrainConfig& config);

}  // namespace meshalign
