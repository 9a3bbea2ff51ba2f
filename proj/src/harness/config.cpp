#include "meshalign/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace meshalign {

std::size_t TrainConfig::total_steps(std::size_t pairs) const {
  if (epochs == 0) return steps;
  const std::size_t per_epoch = (pairs + batch_size - 1) / std::max<std::size_t>(batch_size, 1);
  return epochs * per_epoch;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected an unsigned integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field size_field(T TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.*member = to_size(v); },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Field model_size(std::size_t ModelConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.model.*member = to_size(v); },
          [member](const TrainConfig& c) { return std::to_string(c.model.*member); }};
}

Field head_size(std::size_t HeadSpec::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.model.head.*member = to_size(v); },
          [member](const TrainConfig& c) { return std::to_string(c.model.head.*member); }};
}

Field loss_double(double LossWeights::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.loss.*member = to_double(v); },
          [member](const TrainConfig& c) { return fmt(c.loss.*member); }};
}

Field string_field(std::string TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) { c.*member = v; },
          [member](const TrainConfig& c) { return c.*member; }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"image_h", model_size(&ModelConfig::image_h)},
      {"image_w", model_size(&ModelConfig::image_w)},
      {"mesh_rows", model_size(&ModelConfig::mesh_rows)},
      {"mesh_cols", model_size(&ModelConfig::mesh_cols)},
      {"levels", model_size(&ModelConfig::levels)},
      {"fine_channels", model_size(&ModelConfig::fine_channels)},
      {"coarse_channels", model_size(&ModelConfig::coarse_channels)},
      {"fine_stride", model_size(&ModelConfig::fine_stride)},
      {"coarse_stride", model_size(&ModelConfig::coarse_stride)},
      {"compressed_channels", head_size(&HeadSpec::compressed_channels)},
      {"trunk_channels", head_size(&HeadSpec::trunk_channels)},
      {"trunk_layers", head_size(&HeadSpec::trunk_layers)},
      {"head_hidden", head_size(&HeadSpec::hidden)},
      {"normalize_corr",
       {[](TrainConfig& c, const std::string& v) { c.model.head.normalize = to_bool(v); },
        [](const TrainConfig& c) { return std::string(c.model.head.normalize ? "true" : "false"); }}},
      {"correlation",
       {[](TrainConfig& c, const std::string& v) { c.model.correlation = parse_correlation_kind(v); },
        [](const TrainConfig& c) { return std::string(to_string(c.model.correlation)); }}},
      {"offset_range",
       {[](TrainConfig& c, const std::string& v) { c.model.offset_range = to_double(v); },
        [](const TrainConfig& c) { return fmt(c.model.offset_range); }}},
      {"seed",
       {[](TrainConfig& c, const std::string& v) { c.model.seed = to_size(v); },
        [](const TrainConfig& c) { return std::to_string(c.model.seed); }}},
      {"learning_rate",
       {[](TrainConfig& c, const std::string& v) { c.learning_rate = to_double(v); },
        [](const TrainConfig& c) { return fmt(c.learning_rate); }}},
      {"batch_size", size_field(&TrainConfig::batch_size)},
      {"steps", size_field(&TrainConfig::steps)},
      {"epochs", size_field(&TrainConfig::epochs)},
      {"checkpoint_every", size_field(&TrainConfig::checkpoint_every)},
      {"alpha", loss_double(&LossWeights::alpha)},
      {"beta", loss_double(&LossWeights::beta)},
      {"lambda_h", loss_double(&LossWeights::lambda_h)},
      {"lambda_m", loss_double(&LossWeights::lambda_m)},
      {"data_dir", string_field(&TrainConfig::data_dir)},
      {"checkpoint", string_field(&TrainConfig::checkpoint)},
      {"log", string_field(&TrainConfig::log)},
  };
  return table;
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = [&] { return "config line " + std::to_string(number) + ": "; };
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    std::string name = key;
    if (key == "image_size") name = "image_h";
    const auto it = fields().find(name);
    if (it == fields().end()) throw ConfigError(where() + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where() + "repeated key '" + key + "'");
    try {
      it->second.set(config, value);
      if (key == "image_size") fields().at("image_w").set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where() + key + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
  }
  if (config.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  try {
    config.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

std::map<std::string, std::string> config_entries(const TrainConfig& config) {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : fields()) out[key] = field.get(config);
  return out;
}

std::string to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& [key, value] : config_entries(config)) out += key + " = " + value + "\n";
  return out;
}

}  // namespace meshalign
