#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "meshalign/config.hpp"
#include "meshalign/evaluate.hpp"
#include "meshalign/gradcheck.hpp"
#include "meshalign/synth.hpp"
#include "meshalign/train.hpp"

using namespace meshalign;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("meshalign_harness_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TrainConfig tiny_config() {
  return parse_config(
      "image_size = 32\nmesh_rows = 5\nmesh_cols = 5\nlevels = 1\nfine_channels = 4\n"
      "coarse_channels = 4\nfine_stride = 4\ncoarse_stride = 8\ncompressed_channels = 4\n"
      "trunk_channels = 4\nhead_hidden = 8\nbatch_size = 2\nsteps = 6\nlearning_rate = 1e-3\n"
      "seed = 11\n");
}

Dataset tiny_data(std::size_t count, std::uint64_t seed) {
  SynthOptions o;
  o.size = 32;
  o.displacement = 2.0;
  return generate_dataset(seed, count, o);
}

}  // namespace

TEST_CASE("config parsing") {
  const TrainConfig d = parse_config("");
  CHECK(d.model.image_h == 128);
  CHECK(d.model.mesh_rows == 13);
  CHECK(d.model.levels == 2);
  CHECK(d.model.fine_channels == 64);
  CHECK(d.model.coarse_channels == 128);
  CHECK(d.model.head.compressed_channels == 64);
  CHECK(d.learning_rate == 1e-4);
  CHECK(d.batch_size == 4);
  CHECK(d.loss.alpha == 10.0);
  CHECK(d.loss.beta == 1.0);
  CHECK(d.model.seed == 0);

  const TrainConfig c = parse_config("# comment\nlevels = 0\n beta=0 # trailing\ncorrelation = cl\nimage_size=64\n");
  CHECK(c.model.levels == 0);
  CHECK(c.loss.beta == 0.0);
  CHECK(c.model.correlation == CorrelationKind::Cl);
  CHECK(c.model.image_w == 64);

  CHECK_THROWS_AS(parse_config("levles = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("levels = 2\nlevels = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("levels = two\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("levels\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("coarse_stride = 12\n"), ConfigError);

  const TrainConfig t = tiny_config();
  const TrainConfig back = parse_config(to_text(t));
  CHECK(config_entries(back) == config_entries(t));
  CHECK(t.total_steps(10) == 6);
  TrainConfig e = t;
  e.epochs = 2;
  CHECK(e.total_steps(5) == 6);
}

TEST_CASE("synthetic pairs") {
  std::mt19937_64 rng(1);
  const Image source = procedural_source(rng, 60, 60);

  SUBCASE("no displacement, field or jitter gives identical images") {
    SynthOptions o;
    o.size = 32;
    o.displacement = 0.0;
    o.jitter = 0.0;
    const SynthPair p = gen_pair(rng, source, o);
    CHECK(p.tar.values == p.ref.values);
    for (double v : p.offsets.values) CHECK(v == 0.0);
  }
  SUBCASE("pure translation has a constant flow") {
    SynthOptions o;
    o.size = 32;
    o.translation_only = true;
    o.jitter = 0.0;
    const SynthPair p = gen_pair(rng, source, o);
    for (std::size_t i = 0; i < p.flow.size(); i += 2) {
      const std::size_t pix = i / 2;
      CHECK(p.flow[i] - static_cast<double>(pix % 32) == doctest::Approx(p.offsets.values[0]).epsilon(1e-9));
      CHECK(p.flow[i + 1] - static_cast<double>(pix / 32) == doctest::Approx(p.offsets.values[1]).epsilon(1e-9));
    }
  }
  SUBCASE("warping the target by the ground truth recovers the reference") {
    std::mt19937_64 r(5);
    const Image big = procedural_source(r, 180, 180);
    for (double amplitude : {0.0, 3.0}) {
      SynthOptions o;
      o.displacement = 4.0;
      o.field_amplitude = amplitude;
      o.jitter = 0.0;
      const SynthPair p = gen_pair(r, big, o);
      Tape t;
      const NdArray back = grid_sample(t.constant(p.tar.to_array()), t.constant(p.flow)).value();
      const Mask m = overlap_mask_from_flow(p.flow, 128, 128);
      CHECK(m.count() > 100 * 100);
      CHECK(psnr_masked(p.ref, Image::from_array(back), m) > 35.0);
    }
  }
  SUBCASE("difficulty buckets") {
    GlobalOffsets g;
    g.values[3] = -4.0;
    CHECK(classify(g) == Difficulty::Easy);
    g.values[5] = 9.5;
    CHECK(classify(g) == Difficulty::Moderate);
    g.values[0] = 20.0;
    CHECK(classify(g) == Difficulty::Hard);
    SynthOptions o;
    o.size = 32;
    for (int i = 0; i < 20; ++i) CHECK(gen_pair(rng, source, o).difficulty == Difficulty::Easy);
    CHECK(parse_difficulty("hard") == Difficulty::Hard);
    CHECK_THROWS_AS(parse_difficulty("extreme"), std::invalid_argument);
  }
  SUBCASE("source too small") {
    SynthOptions o;
    o.size = 56;
    CHECK_THROWS_AS(gen_pair(rng, source, o), std::invalid_argument);
  }
}

TEST_CASE("dataset files round trip") {
  const auto dir = temp_dir("dataset");
  const Dataset data = tiny_data(3, 2);
  save_dataset(data, dir);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].id == data[i].id);
    CHECK(back[i].difficulty == data[i].difficulty);
    CHECK(back[i].offsets.values == data[i].offsets.values);
    for (std::size_t k = 0; k < data[i].ref.values.size(); ++k)
      CHECK(std::abs(back[i].ref.values[k] - data[i].ref.values[k]) <= 0.5 / 255.0 + 1e-12);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("adam matches a hand computation") {
  ParameterSet ps;
  ps.add("w", NdArray(Shape{2}, {1.0, -2.0}));
  Adam adam;
  adam.learning_rate = 0.1;
  adam.step(ps, {NdArray(Shape{2}, {0.5, -3.0})});
  // first step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
  CHECK(ps.value(0)[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(ps.value(0)[1] == doctest::Approx(-2.0 + 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-15));
  CHECK(adam.steps == 1);
}

TEST_CASE("training") {
  const TrainConfig cfg = tiny_config();
  const Dataset data = tiny_data(4, 3);
  const auto prepared = prepare(data);

  SUBCASE("first loss equals the identity-alignment loss") {
    TrainState s = init_training(cfg);
    std::mt19937_64 probe = s.rng;
    std::uniform_int_distribution<std::size_t> pick(0, prepared.size() - 1);
    const std::size_t a = pick(probe), b = pick(probe);
    const LossBreakdown l = train_step(s, prepared);
    double expected = 0.0;
    for (std::size_t i : {a, b}) {
      Tape t;
      const Var ref = t.constant(prepared[i].ref), tar = t.constant(prepared[i].tar);
      const Mask full(32, 32, 1.0);
      expected += 2.0 * masked_l1(ref, tar, full).value()[0] + l_jnd(ref, tar, prepared[i].jnd, full).value()[0];
    }
    CHECK(l.total == doctest::Approx(expected / 2.0).epsilon(1e-14));
    CHECK(l.l_shape == 0.0);
  }
  SUBCASE("identical seeds give identical trajectories") {
    std::vector<double> first, second;
    TrainState a = init_training(cfg), b = init_training(cfg);
    train(a, prepared, [&](std::size_t, const LossBreakdown& l) { first.push_back(l.total); });
    train(b, prepared, [&](std::size_t, const LossBreakdown& l) { second.push_back(l.total); });
    CHECK(first.size() == 6);
    CHECK(first == second);
    for (std::size_t i = 0; i < a.model.params.size(); ++i) CHECK(a.model.params.value(i) == b.model.params.value(i));
  }
  SUBCASE("log file") {
    const auto dir = temp_dir("log");
    TrainConfig c = cfg;
    c.log = (dir / "log.csv").string();
    TrainState s = init_training(c);
    train(s, prepared);
    std::ifstream in(c.log);
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,l_content,l_shape,l_jnd,total");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 6);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("non-finite data aborts with the offending op") {
    auto bad = prepared;
    bad[0].tar[7] = std::nan("");
    bad[1].tar[7] = std::nan("");
    bad[2].tar[7] = std::nan("");
    bad[3].tar[7] = std::nan("");
    TrainState s = init_training(cfg);
    CHECK_THROWS_AS(train_step(s, bad), NonFiniteError);
  }
  CHECK_THROWS_AS([&] { TrainState s = init_training(cfg); train_step(s, {}); }(), std::invalid_argument);
}

TEST_CASE("checkpoints") {
  const auto dir = temp_dir("ckpt");
  TrainConfig cfg = tiny_config();
  const auto prepared = prepare(tiny_data(4, 4));
  TrainState s = init_training(cfg);
  for (int i = 0; i < 3; ++i) train_step(s, prepared);
  const auto path = dir / "model.ckpt";
  save_checkpoint(s, path);
  TrainState r = load_checkpoint(path);
  CHECK(r.step == 3);
  CHECK(config_entries(r.config) == config_entries(s.config));
  for (std::size_t i = 0; i < s.model.params.size(); ++i) {
    CHECK(r.model.params.value(i) == s.model.params.value(i));
    CHECK(r.optimizer.m[i] == s.optimizer.m[i]);
    CHECK(r.optimizer.v[i] == s.optimizer.v[i]);
  }
  const Sample probe = tiny_data(1, 9)[0];
  CHECK(align_pair(r.model, probe.ref, probe.tar).warped.values ==
        align_pair(s.model, probe.ref, probe.tar).warped.values);

  SUBCASE("resuming continues the same trajectory") {
    const LossBreakdown a = train_step(s, prepared);
    const LossBreakdown b = train_step(r, prepared);
    CHECK(a.total == b.total);
  }
  SUBCASE("corrupt files are rejected") {
    {
      std::ofstream out(dir / "bad.ckpt", std::ios::binary);
      out << "garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), CheckpointError);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation") {
  const TrainConfig cfg = tiny_config();
  const AlignModel model = make_model(cfg.model);

  SUBCASE("identity model on identical pairs hits the caps") {
    Dataset same = tiny_data(3, 5);
    for (Sample& s : same) s.tar = s.ref;
    const EvalReport r = evaluate(model, same);
    REQUIRE(r.rows.size() == 3);
    for (const EvalRow& row : r.rows) {
      CHECK(row.psnr == kPsnrCap);
      CHECK(row.ssim == 1.0);
    }
  }
  SUBCASE("bucket averages equal the mean of their rows") {
    std::vector<EvalRow> rows = {{"a", Difficulty::Easy, 20, 0.5},
                                 {"b", Difficulty::Hard, 30, 0.7},
                                 {"c", Difficulty::Easy, 25, 0.9}};
    const EvalReport r = summarize(rows);
    CHECK(r.buckets.at(Difficulty::Easy).psnr == 22.5);
    CHECK(r.buckets.at(Difficulty::Easy).ssim == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(r.buckets.at(Difficulty::Hard).count == 1);
    CHECK(r.overall.psnr == 25.0);
    CHECK(r.buckets.count(Difficulty::Moderate) == 0);
  }
  SUBCASE("reports are reproducible and fused images are written") {
    const auto dir = temp_dir("eval");
    const Dataset data = tiny_data(2, 6);
    const EvalReport r = evaluate(model, data, dir / "fused");
    write_report(r, dir / "a.csv");
    write_report(evaluate(model, data), dir / "b.csv");
    std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("id,difficulty,psnr,ssim\n", 0) == 0);
    CHECK(std::filesystem::exists(dir / "fused" / (data[0].id + "_fused.png")));
    const EvalReport id = evaluate_identity(data);
    CHECK(id.rows[0].psnr == r.rows[0].psnr);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("gradcheck registry") {
  const auto ops = gradcheck_ops();
  for (const char* name : {"elementwise", "matmul", "conv2d", "maxpool2d", "reshape_permute", "pad_concat",
                           "grid_sample", "linear", "corr4d", "fsc_regress", "dlt_solve", "mesh_to_flow",
                           "l_content", "l_shape", "l_jnd"})
    CHECK(std::find(ops.begin(), ops.end(), name) != ops.end());
  for (const auto& op : ops) {
    const OpCheckResult r = run_gradcheck(op, 1);
    INFO(op << " rel " << r.rel_error);
    CHECK(r.passed());
  }
  CHECK_THROWS_AS(run_gradcheck("nope", 0), std::invalid_argument);
}
