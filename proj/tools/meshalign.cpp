// meshalign command line: train, align, eval, jnd, bench, gradcheck, gen.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meshalign/config.hpp"
#include "meshalign/correlation.hpp"
#include "meshalign/evaluate.hpp"
#include "meshalign/gradcheck.hpp"
#include "meshalign/jnd.hpp"
#include "meshalign/synth.hpp"
#include "meshalign/train.hpp"

namespace fs = std::filesystem;
using namespace meshalign;

namespace {

Image mask_image(const Mask& m) {
  Image out(m.height, m.width, 1);
  out.values = m.values;
  return out;
}

std::vector<Image> load_sources(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) {
    Image img = load_image(f);
    if (img.channels == 1) {
      Image rgb(img.height, img.width, 3);
      for (std::size_t c = 0; c < 3; ++c)
        std::copy(img.values.begin(), img.values.end(), rgb.values.begin() + c * img.pixels());
      img = std::move(rgb);
    }
    out.push_back(std::move(img));
  }
  if (out.empty()) throw std::runtime_error("no images in " + dir.string());
  return out;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  const TrainConfig cfg = load_config(config_path);
  TrainState state = resume.empty() ? init_training(cfg) : load_checkpoint(resume);
  if (!resume.empty()) {
    // schedule and output keys may change on resume; the model may not
    const auto saved = config_entries(state.config);
    const auto given = config_entries(cfg);
    for (const char* key : {"learning_rate", "steps", "epochs", "checkpoint", "checkpoint_every", "log", "data_dir",
                            "batch_size"})
      if (saved.at(key) != given.at(key)) std::cerr << "resume: using " << key << "=" << given.at(key) << "\n";
    TrainConfig merged = cfg;
    merged.model = state.model.config;
    if (config_entries(merged) != given) throw ConfigError("resume: model settings differ from the checkpoint");
    state.config = merged;
    state.optimizer.learning_rate = merged.learning_rate;
  }
  if (state.config.checkpoint.empty()) state.config.checkpoint = "meshalign.ckpt";

  Dataset data;
  if (!cfg.data_dir.empty()) {
    data = load_dataset(cfg.data_dir);
  } else {
    SynthOptions o;
    o.size = cfg.model.image_h;
    data = generate_dataset(cfg.model.seed, 256, o);
    std::cerr << "no data_dir, training on 256 procedural easy pairs\n";
  }
  const auto prepared = prepare(data);
  const std::size_t total = state.config.total_steps(prepared.size());
  train(state, prepared, [&](std::size_t step, const LossBreakdown& l) {
    if (step % 50 == 0 || step == total)
      std::printf("step %zu/%zu  total %.6f  content %.6f  shape %.6f  jnd %.6f\n", step, total, l.total,
                  l.l_content, l.l_shape, l.l_jnd);
  });
  std::printf("checkpoint written to %s\n", state.config.checkpoint.c_str());
  return 0;
}

int cmd_align(const std::string& ckpt, const std::string& ref_path, const std::string& tar_path,
              const std::string& warped_path, const std::string& fused_path, const std::string& mask_path) {
  const TrainState state = load_checkpoint(ckpt);
  const Alignment a = align_pair(state.model, load_image(ref_path), load_image(tar_path));
  save_image(a.warped, warped_path);
  save_image(a.fused, fused_path);
  if (!mask_path.empty()) save_image(mask_image(a.mask), mask_path);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& report_path,
             const std::string& fusion_dir) {
  const TrainState state = load_checkpoint(ckpt);
  const Dataset data = load_dataset(data_dir);
  for (const Sample& s : data)
    if (s.ref.height != state.model.config.image_h || s.ref.width != state.model.config.image_w)
      throw ConfigError("eval: pair " + s.id + " does not match the checkpoint image size");
  std::optional<fs::path> fusion;
  if (!fusion_dir.empty()) fusion = fusion_dir;
  const EvalReport r = evaluate(state.model, data, fusion);
  write_report(r, report_path);
  for (const auto& [d, b] : r.buckets)
    std::printf("%-9s n=%-4zu psnr %.3f  ssim %.4f\n", to_string(d), b.count, b.psnr, b.ssim);
  std::printf("%-9s n=%-4zu psnr %.3f  ssim %.4f\n", "average", r.overall.count, r.overall.psnr, r.overall.ssim);
  return 0;
}

int cmd_jnd(const std::string& in, const std::string& out) {
  Image j = jnd_map(load_image(in));
  for (double& v : j.values) v = std::clamp(v, 0.0, 1.0);
  save_image(j, out);
  return 0;
}

int cmd_bench(const std::string& variant, const std::vector<std::size_t>& dims, const HeadSpec& head, int reps) {
  const CorrelationKind kind = parse_correlation_kind(variant);
  if (dims.size() != 5 && dims.size() != 6)
    throw std::invalid_argument("--dims expects c,h1,w1,h2,w2[,c_r]");
  FlopsQuery q;
  q.c = dims[0];
  q.h1 = dims[1];
  q.w1 = dims[2];
  q.h2 = dims[3];
  q.w2 = dims[4];
  q.head = head;
  q.c_r = dims.size() == 6 ? dims[5] : head.compressed_channels;
  q.head.compressed_channels = q.c_r;
  const std::uint64_t flops = flops_estimate(kind, q);
  std::printf("variant %s  c=%zu  ref %zux%zu  tar %zux%zu  c_r=%zu\n", to_string(kind), q.c, q.h1, q.w1, q.h2,
              q.w2, q.c_r);
  std::printf("flops %llu (%.4f GFLOPs)\n", static_cast<unsigned long long>(flops), static_cast<double>(flops) / 1e9);
  if (kind == CorrelationKind::Ccl) {
    std::printf("time n/a (estimator only)\n");
    return 0;
  }
  std::mt19937_64 rng(0);
  ParameterSet params;
  const FscHead h = make_head(params, "bench", kind, q.h1, q.w1, q.h2, q.w2, q.output_dim, q.head, rng);
  std::normal_distribution<double> nd;
  NdArray ref(Shape{q.c, q.h1, q.w1}), tar(Shape{q.c, q.h2, q.w2});
  for (double& v : ref.data()) v = nd(rng);
  for (double& v : tar.data()) v = nd(rng);
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    Tape t;
    const BoundParameters p(t, params, false);
    regress(h, p, t.constant(ref), t.constant(tar));
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::printf("time %.3f ms (best of %d, forward)\n", best * 1e3, reps);
  return 0;
}

int cmd_gradcheck(const std::string& op, int seeds) {
  std::vector<std::string> ops = op.empty() ? gradcheck_ops() : std::vector<std::string>{op};
  bool ok = true;
  for (const auto& name : ops) {
    double worst = 0.0, tol = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const OpCheckResult r = run_gradcheck(name, static_cast<std::uint64_t>(s));
      worst = std::max(worst, r.rel_error);
      tol = r.tolerance;
      ok = ok && r.passed();
    }
    std::printf("%-4s %-16s max rel err %.3e  (tol %.0e, %d seeds)\n", worst < tol ? "ok" : "FAIL", name.c_str(),
                worst, tol, seeds);
  }
  return ok ? 0 : 1;
}

int cmd_gen(const std::string& source_dir, const std::string& out, std::size_t count, const std::string& level,
            std::size_t size, double field, bool translation, std::uint64_t seed) {
  SynthOptions o;
  o.size = size;
  o.displacement = displacement_bound(parse_difficulty(level));
  o.field_amplitude = field;
  o.translation_only = translation;
  const std::vector<Image> sources = source_dir.empty() ? std::vector<Image>{} : load_sources(source_dir);
  const Dataset data = generate_dataset(seed, count, o, sources);
  save_dataset(data, out);
  std::printf("wrote %zu pairs to %s\n", data.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshalign: dense cross-scale mesh image alignment"};
  app.require_subcommand(1);

  std::string config_path, resume;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "key=value config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  std::string ckpt, ref, tar, warped, fused, mask_out;
  auto* align_cmd = app.add_subcommand("align", "align one image pair");
  align_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--ref", ref)->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--tar", tar)->required()->check(CLI::ExistingFile);
  align_cmd->add_option("--out-warped", warped)->required();
  align_cmd->add_option("--out-fused", fused)->required();
  align_cmd->add_option("--out-mask", mask_out);

  std::string data_dir, report, fusion_dir;
  auto* eval_cmd = app.add_subcommand("eval", "masked PSNR/SSIM report over a dataset");
  eval_cmd->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_dir)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--report", report)->required();
  eval_cmd->add_option("--fusion-dir", fusion_dir, "write <id>_fused.png here");

  std::string jnd_in, jnd_out;
  auto* jnd_cmd = app.add_subcommand("jnd", "write the JND map of an image");
  jnd_cmd->add_option("--in", jnd_in)->required()->check(CLI::ExistingFile);
  jnd_cmd->add_option("--out", jnd_out)->required();

  std::string variant = "fsc";
  std::vector<std::size_t> dims;
  HeadSpec head;
  int reps = 3;
  auto* bench_cmd = app.add_subcommand("bench", "FLOPs estimate and forward time of one regression head");
  bench_cmd->add_option("--variant", variant)->check(CLI::IsMember({"cl", "ccl", "fsc"}));
  bench_cmd->add_option("--dims", dims, "c,h1,w1,h2,w2[,c_r]")->required()->delimiter(',');
  bench_cmd->add_option("--trunk-channels", head.trunk_channels);
  bench_cmd->add_option("--trunk-layers", head.trunk_layers);
  bench_cmd->add_option("--hidden", head.hidden);
  bench_cmd->add_option("--reps", reps)->check(CLI::PositiveNumber);

  std::string op;
  int seeds = 10;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_option("--op", op)->check(CLI::IsMember(gradcheck_ops()));
  grad_cmd->add_option("--seeds", seeds)->check(CLI::PositiveNumber);

  std::string source_dir, out_dir, level = "easy";
  std::size_t count = 16, size = 128;
  double field = 0.0;
  bool translation = false;
  std::uint64_t seed = 0;
  auto* gen_cmd = app.add_subcommand("gen", "generate synthetic pairs");
  gen_cmd->add_option("--source", source_dir, "directory of source images (procedural if omitted)")
      ->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--out", out_dir)->required();
  gen_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--difficulty", level)->check(CLI::IsMember({"easy", "moderate", "hard"}));
  gen_cmd->add_option("--size", size);
  gen_cmd->add_option("--field", field, "local displacement amplitude in px (<= 3)")->check(CLI::Range(0.0, 3.0));
  gen_cmd->add_flag("--translation", translation);
  gen_cmd->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_path, resume);
    if (*align_cmd) return cmd_align(ckpt, ref, tar, warped, fused, mask_out);
    if (*eval_cmd) return cmd_eval(ckpt, data_dir, report, fusion_dir);
    if (*jnd_cmd) return cmd_jnd(jnd_in, jnd_out);
    if (*bench_cmd) return cmd_bench(variant, dims, head, reps);
    if (*grad_cmd) return cmd_gradcheck(op, seeds);
    if (*gen_cmd) return cmd_gen(source_dir, out_dir, count, level, size, field, translation, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
