#include "meshalign/cross_scale.hpp"

#include <stdexcept>

namespace meshalign {

std::size_t pyramid_extent(std::size_t extent, std::size_t level) {
  for (std::size_t i = 0; i < level; ++i) extent = (extent + 1) / 2;
  return extent;
}

Pyramid build_pyramid(const Var& f, std::size_t N) {
  if (f.shape().size() != 3) throw ShapeError("build_pyramid: expected [c,h,w], got " + to_string(f.shape()));
  if (N > kMaxPyramidDepth) throw std::invalid_argument("build_pyramid: N must be at most 4");
  const std::size_t scale = std::size_t{1} << N;
  if (f.shape()[1] < scale || f.shape()[2] < scale)
    throw std::invalid_argument("build_pyramid: " + to_string(f.shape()) + " too small for N=" +
                                std::to_string(N));
  Pyramid pyr;
  pyr.levels.push_back(f);
  for (std::size_t i = 0; i < N; ++i) pyr.levels.push_back(maxpool2d(pyr.levels.back()));
  return pyr;
}

std::vector<ScalePair> enumerate_pairs(std::size_t N) {
  std::vector<ScalePair> pairs;
  for (std::size_t m = 0; m <= N; ++m)
    for (std::size_t n = 0; n <= N; ++n)
      if (m != n) pairs.emplace_back(m, n);
  return pairs;
}

PairHeads make_pair_heads(ParameterSet& params, const std::string& prefix, CorrelationKind kind,
                          std::size_t N, std::size_t h, std::size_t w, std::size_t output_dim,
                          const HeadSpec& spec, std::mt19937_64& rng) {
  PairHeads heads;
  for (const auto& [m, n] : enumerate_pairs(N)) {
    const std::string name = prefix + "." + std::to_string(m) + std::to_string(n);
    heads.emplace(ScalePair{m, n},
                  make_head(params, name, kind, pyramid_extent(h, m), pyramid_extent(w, m),
                            pyramid_extent(h, n), pyramid_extent(w, n), output_dim, spec, rng));
  }
  return heads;
}

Var cross_scale_offsets(const Pyramid& pyr_ref, const Pyramid& pyr_tar, const PairHeads& heads,
                        const BoundParameters& p, std::size_t output_dim) {
  if (pyr_ref.levels.empty() || pyr_ref.depth() != pyr_tar.depth())
    throw std::invalid_argument("cross_scale_offsets: pyramids differ in depth");
  Var total;
  for (const ScalePair& pair : enumerate_pairs(pyr_ref.depth())) {
    const auto it = heads.find(pair);
    if (it == heads.end())
      throw std::invalid_argument("cross_scale_offsets: no head for pair (" +
                                  std::to_string(pair.first) + "," + std::to_string(pair.second) + ")");
    Var o = regress(it->second, p, pyr_ref.levels[pair.first], pyr_tar.levels[pair.second]);
    total = total.valid() ? add(total, o) : o;
  }
  if (!total.valid()) return pyr_ref.levels[0].tape().constant(NdArray(Shape{output_dim}, 0.0));
  return total;
}

Var combine_local(const Var& o_intra, const Var& o_cross) { return add(o_intra, o_cross); }

}  // namespace meshalign
