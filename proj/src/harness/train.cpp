#include "meshalign/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "meshalign/jnd.hpp"

namespace meshalign {

void Adam::reset(const ParameterSet& params) {
  steps = 0;
  m.clear();
  v.clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m.emplace_back(params.value(i).shape(), 0.0);
    v.emplace_back(params.value(i).shape(), 0.0);
  }
}

void Adam::step(ParameterSet& params, const std::vector<NdArray>& grads) {
  if (m.size() != params.size()) reset(params);
  ++steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    NdArray& p = params.value(i);
    const NdArray& g = grads.at(i);
    for (std::size_t e = 0; e < p.size(); ++e) {
      m[i][e] = beta1 * m[i][e] + (1.0 - beta1) * g[e];
      v[i][e] = beta2 * v[i][e] + (1.0 - beta2) * g[e] * g[e];
      p[e] -= learning_rate * (m[i][e] / c1) / (std::sqrt(v[i][e] / c2) + eps);
    }
  }
}

TrainState init_training(const TrainConfig& config) {
  TrainState state{config, make_model(config.model), {}, 0, std::mt19937_64(config.model.seed ^ 0x5851f42d4c957f2dULL)};
  state.optimizer.learning_rate = config.learning_rate;
  state.optimizer.reset(state.model.params);
  return state;
}

std::vector<PreparedSample> prepare(const Dataset& data) {
  std::vector<PreparedSample> out;
  out.reserve(data.size());
  for (const Sample& s : data) out.push_back({s.ref.to_array(), s.tar.to_array(), jnd_map(s.ref)});
  return out;
}

LossBreakdown sample_loss(const AlignModel& model, const LossWeights& weights,
                          const PreparedSample& sample, std::vector<NdArray>* grads) {
  const ModelConfig& cfg = model.config;
  Tape tape;
  BoundParameters p(tape, model.params, grads != nullptr);
  const Var ref = tape.constant(sample.ref);
  const ForwardOutput out = forward(model, p, ref, tape.constant(sample.tar));
  const Mesh regular = regular_mesh(cfg.mesh_rows, cfg.mesh_cols, cfg.image_h, cfg.image_w);
  const LossTerms terms = total_loss(out, ref, regular, sample.jnd, weights);
  if (grads) {
    tape.backward(terms.total);
    *grads = p.gradients();
  }
  return terms.breakdown(weights);
}

LossBreakdown train_step(TrainState& state, const std::vector<PreparedSample>& data) {
  if (data.empty()) throw std::invalid_argument("train: dataset is empty");
  const std::size_t batch = state.config.batch_size;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<NdArray> total;
  LossBreakdown mean;
  mean.alpha = state.config.loss.alpha;
  mean.beta = state.config.loss.beta;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<NdArray> grads;
    const LossBreakdown l = sample_loss(state.model, state.config.loss, data[pick(state.rng)], &grads);
    mean.l_content += l.l_content;
    mean.l_shape += l.l_shape;
    mean.l_jnd += l.l_jnd;
    mean.total += l.total;
    if (total.empty()) total = std::move(grads);
    else
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += grads[i];
  }
  const double scale = 1.0 / static_cast<double>(batch);
  for (NdArray& g : total) {
    g *= scale;
    if (!g.all_finite()) throw NonFiniteError("gradient", 0);
  }
  mean.l_content *= scale;
  mean.l_shape *= scale;
  mean.l_jnd *= scale;
  mean.total *= scale;
  if (!std::isfinite(mean.total)) throw NonFiniteError("total_loss", 0);
  state.optimizer.step(state.model.params, total);
  ++state.step;
  return mean;
}

void write_log_header(std::ostream& out) { out << "step,l_content,l_shape,l_jnd,total\n"; }

void write_log_row(std::ostream& out, std::size_t step, const LossBreakdown& l) {
  out.precision(17);
  out << step << ',' << l.l_content << ',' << l.l_shape << ',' << l.l_jnd << ',' << l.total << '\n';
}

void train(TrainState& state, const std::vector<PreparedSample>& data, const StepCallback& on_step) {
  const TrainConfig& cfg = state.config;
  const std::size_t target = cfg.total_steps(data.size());
  std::ofstream log;
  if (!cfg.log.empty()) {
    const bool fresh = state.step == 0 || !std::filesystem::exists(cfg.log);
    log.open(cfg.log, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot write log " + cfg.log);
    if (fresh) write_log_header(log);
  }
  while (state.step < target) {
    const LossBreakdown loss = train_step(state, data);
    if (log.is_open()) {
      write_log_row(log, state.step, loss);
      log.flush();
    }
    if (on_step) on_step(state.step, loss);
    if (!cfg.checkpoint.empty() && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
      save_checkpoint(state, cfg.checkpoint);
  }
  if (!cfg.checkpoint.empty()) save_checkpoint(state, cfg.checkpoint);
}

// ---- checkpoints ---------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_array(std::ostream& out, const NdArray& a) {
  for (double d : a.data()) write_u64(out, std::bit_cast<std::uint64_t>(d));
}

void read_array(std::istream& in, NdArray& a) {
  for (double& d : a.data()) d = std::bit_cast<double>(read_u64(in));
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["config"] = config_entries(state.config);
  header["step"] = state.step;
  header["adam_steps"] = state.optimizer.steps;
  std::ostringstream rng;
  rng << state.rng;
  header["rng"] = rng.str();
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < state.model.params.size(); ++i)
    tensors.push_back({{"name", state.model.params.name(i)}, {"shape", state.model.params.value(i).shape()}});
  header["tensors"] = tensors;
  header["sections"] = {"param", "adam_m", "adam_v"};
  const std::string text = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (std::size_t i = 0; i < state.model.params.size(); ++i) write_array(out, state.model.params.value(i));
    for (const NdArray& a : state.optimizer.m) write_array(out, a);
    for (const NdArray& a : state.optimizer.v) write_array(out, a);
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::uint64_t length = read_u64(in);
  if (length > (1u << 26)) throw CheckpointError("checkpoint: implausible header length");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("version", 0) != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");

  std::string config_text;
  for (const auto& [key, value] : header.at("config").items()) config_text += key + "=" + value.get<std::string>() + "\n";
  TrainState state = init_training(parse_config(config_text));
  const auto& tensors = header.at("tensors");
  ParameterSet& params = state.model.params;
  if (tensors.size() != params.size()) throw CheckpointError("checkpoint: parameter count does not match the config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].at("name").get<std::string>() != params.name(i) ||
        tensors[i].at("shape").get<Shape>() != params.value(i).shape())
      throw CheckpointError("checkpoint: tensor " + std::to_string(i) + " does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) read_array(in, params.value(i));
  for (NdArray& a : state.optimizer.m) read_array(in, a);
  for (NdArray& a : state.optimizer.v) read_array(in, a);
  state.step = header.at("step").get<std::size_t>();
  state.optimizer.steps = header.at("adam_steps").get<std::uint64_t>();
  std::istringstream rng(header.at("rng").get<std::string>());
  rng >> state.rng;
  if (!rng) throw CheckpointError("checkpoint: bad RNG state");
  return state;
}

}  // namespace meshalign
