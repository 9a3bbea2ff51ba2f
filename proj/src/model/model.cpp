#include "meshalign/model.hpp"

#include <bit>
#include <stdexcept>
#include <string>

namespace meshalign {

namespace {

bool power_of_two(std::size_t n) { return n != 0 && std::has_single_bit(n); }

std::size_t log2_exact(std::size_t n) { return static_cast<std::size_t>(std::countr_zero(n)); }

Var constant_scale(Tape& tape, std::size_t pairs, double sx, double sy) {
  NdArray s(Shape{pairs * 2});
  for (std::size_t i = 0; i < pairs; ++i) {
    s[2 * i] = sx;
    s[2 * i + 1] = sy;
  }
  return tape.constant(std::move(s));
}

// Pixel coordinates (x, y) = stride * (j, i) of every fine-map position.
NdArray feature_coordinates(std::size_t h, std::size_t w, double stride) {
  NdArray out(Shape{h, w, 2});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      out[(i * w + j) * 2] = stride * static_cast<double>(j);
      out[(i * w + j) * 2 + 1] = stride * static_cast<double>(i);
    }
  return out;
}

// The projective denominator must stay positive over the whole image rectangle.
bool usable(const NdArray& H, std::size_t h, std::size_t w) {
  for (const auto& [x, y] : image_corners(h, w))
    if (H[6] * x + H[7] * y + H[8] <= 1e-9) return false;
  return H.all_finite();
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (!power_of_two(fine_stride)) fail("fine_stride must be a power of two");
  if (coarse_stride % fine_stride != 0 || !power_of_two(coarse_stride / fine_stride))
    fail("coarse_stride must be a power-of-two multiple of fine_stride");
  if (image_h % coarse_stride != 0 || image_w % coarse_stride != 0)
    fail("image extents must be divisible by coarse_stride");
  if (mesh_rows < 2 || mesh_cols < 2) fail("mesh needs at least 2x2 vertices");
  if (levels > kMaxPyramidDepth) fail("levels must be at most 4");
  if (fine_h() < (std::size_t{1} << levels) || fine_w() < (std::size_t{1} << levels))
    fail("fine features too small for the pyramid depth");
  if (channels == 0 || fine_channels == 0 || coarse_channels == 0 || head.compressed_channels == 0)
    fail("channel counts must be positive");
  if (correlation == CorrelationKind::Ccl) fail("ccl is not an executable correlation");
  if (!(offset_range > 0.0)) fail("offset_range must be positive");
}

AlignModel make_model(const ModelConfig& config) {
  config.validate();
  AlignModel model;
  model.config = config;
  std::mt19937_64 rng(config.seed);
  ParameterSet& ps = model.params;
  Extractor& ex = model.extractor;

  std::size_t channels = config.channels;
  for (std::size_t i = 0; i < log2_exact(config.fine_stride); ++i) {
    ex.trunk.push_back(make_conv(ps, "extractor.down" + std::to_string(i), channels,
                                 config.fine_channels, 3, 2, 1, rng));
    channels = config.fine_channels;
  }
  ex.fine_out = make_conv(ps, "extractor.fine", channels, config.fine_channels, 3, 1, 1, rng);
  for (std::size_t i = 0; i < log2_exact(config.coarse_stride / config.fine_stride); ++i) {
    ex.coarse.push_back(make_conv(ps, "extractor.coarse_down" + std::to_string(i), channels,
                                  config.coarse_channels, 3, 2, 1, rng));
    channels = config.coarse_channels;
  }
  ex.coarse_out = make_conv(ps, "extractor.coarse", channels, config.coarse_channels, 3, 1, 1, rng);

  const std::size_t ch = config.coarse_h(), cw = config.coarse_w();
  const std::size_t fh = config.fine_h(), fw = config.fine_w();
  model.global_head =
      make_head(ps, "global", config.correlation, ch, cw, ch, cw, 8, config.head, rng);
  model.intra_head = make_head(ps, "intra", config.correlation, fh, fw, fh, fw,
                               config.local_dim(), config.head, rng);
  model.cross_heads = make_pair_heads(ps, "cross", config.correlation, config.levels, fh, fw,
                                      config.local_dim(), config.head, rng);
  return model;
}

Features extract(const AlignModel& model, const BoundParameters& p, const Var& img) {
  const ModelConfig& cfg = model.config;
  if (img.shape() != Shape{cfg.channels, cfg.image_h, cfg.image_w})
    throw ShapeError("extract: expected [" + std::to_string(cfg.channels) + "," + std::to_string(cfg.image_h) + "," +
                     std::to_string(cfg.image_w) + "], got " + to_string(img.shape()));
  Var x = img;
  for (const ConvLayer& layer : model.extractor.trunk) x = relu(apply(layer, p, x));
  Features f;
  f.fine = apply(model.extractor.fine_out, p, x);
  for (const ConvLayer& layer : model.extractor.coarse) x = relu(apply(layer, p, x));
  f.coarse = apply(model.extractor.coarse_out, p, x);
  return f;
}

GlobalResult global_stage(const AlignModel& model, const BoundParameters& p,
                          const Var& coarse_ref, const Var& coarse_tar) {
  const ModelConfig& cfg = model.config;
  Tape& tape = coarse_ref.tape();
  const Var raw = regress(model.global_head, p, coarse_ref, coarse_tar);
  GlobalResult out;
  out.offsets = reshape(mul(raw, constant_scale(tape, 4, static_cast<double>(cfg.image_w),
                                                static_cast<double>(cfg.image_h))),
                        {4, 2});
  try {
    out.H = dlt_solve(out.offsets, cfg.image_h, cfg.image_w);
    out.degenerate = !usable(out.H.value(), cfg.image_h, cfg.image_w);
  } catch (const GeometryError&) {
    out.degenerate = true;
  }
  if (out.degenerate) out.H = tape.constant(Homography::identity().to_array());
  return out;
}

LocalResult local_stage(const AlignModel& model, const BoundParameters& p, const Var& fine_ref,
                        const Var& fine_tar, const Var& H) {
  const ModelConfig& cfg = model.config;
  Tape& tape = fine_ref.tape();
  const std::size_t fh = cfg.fine_h(), fw = cfg.fine_w();
  const double stride = static_cast<double>(cfg.fine_stride);

  const Var coords = tape.constant(feature_coordinates(fh, fw, stride));
  const Var grid = mul(apply_homography(coords, H), 1.0 / stride);
  LocalResult out;
  out.warped_features = grid_sample(fine_tar, grid);

  const double cell_w = static_cast<double>(cfg.image_w - 1) / static_cast<double>(cfg.mesh_cols - 1);
  const double cell_h = static_cast<double>(cfg.image_h - 1) / static_cast<double>(cfg.mesh_rows - 1);
  const Var scale = constant_scale(tape, cfg.mesh_rows * cfg.mesh_cols, cell_w * cfg.offset_range,
                                   cell_h * cfg.offset_range);
  const Shape mesh_shape{cfg.mesh_rows, cfg.mesh_cols, 2};
  auto to_mesh = [&](const Var& raw) { return reshape(mul(raw, scale), mesh_shape); };

  out.intra = to_mesh(regress(model.intra_head, p, fine_ref, out.warped_features));
  const Pyramid pyr_ref = build_pyramid(fine_ref, cfg.levels);
  const Pyramid pyr_tar = build_pyramid(out.warped_features, cfg.levels);
  out.cross = to_mesh(cross_scale_offsets(pyr_ref, pyr_tar, model.cross_heads, p, cfg.local_dim()));
  out.total = combine_local(out.intra, out.cross);
  return out;
}

ForwardOutput forward(const AlignModel& model, const BoundParameters& p, const Var& ref,
                      const Var& tar) {
  const ModelConfig& cfg = model.config;
  if (ref.shape() != tar.shape()) throw ShapeError("forward: reference and target shapes differ");
  Tape& tape = ref.tape();
  const Features fr = extract(model, p, ref), ft = extract(model, p, tar);

  ForwardOutput out;
  const GlobalResult g = global_stage(model, p, fr.coarse, ft.coarse);
  out.global_offsets = g.offsets;
  out.H = g.H;
  out.degenerate = g.degenerate;

  const LocalResult l = local_stage(model, p, fr.fine, ft.fine, g.H);
  out.local_intra = l.intra;
  out.local_cross = l.cross;
  out.local_offsets = l.total;

  const Var regular = tape.constant(
      regular_mesh(cfg.mesh_rows, cfg.mesh_cols, cfg.image_h, cfg.image_w).to_array());
  out.homography_mesh = apply_homography(regular, g.H);
  out.final_mesh = add(out.homography_mesh, l.total);

  out.warped_h = warp_image(tar, out.homography_mesh);
  out.mask_h = overlap_mask(Mesh::from_array(out.homography_mesh.value()), cfg.image_h, cfg.image_w);
  out.warped = warp_image(tar, out.final_mesh);
  out.mask = overlap_mask(Mesh::from_array(out.final_mesh.value()), cfg.image_h, cfg.image_w);
  return out;
}

}  // namespace meshalign
