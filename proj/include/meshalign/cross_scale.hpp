#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "meshalign/correlation.hpp"

namespace meshalign {

/// levels[0] is the input map; levels[i+1] = maxpool2d(levels[i]).
struct Pyramid {
  std::vector<Var> levels;
  std::size_t depth() const { return levels.empty() ? 0 : levels.size() - 1; }
};

using ScalePair = std::pair<std::size_t, std::size_t>;

/// One independent head per ordered pair (m, n), m != n.
using PairHeads = std::map<ScalePair, FscHead>;

constexpr std::size_t kMaxPyramidDepth = 4;

/// Spatial extent of pyramid level `level` for an input extent.
std::size_t pyramid_extent(std::size_t extent, std::size_t level);

Pyramid build_pyramid(const Var& f, std::size_t N);

/// All ordered pairs with m != n over 0..N, in lexicographic order.
std::vector<ScalePair> enumerate_pairs(std::size_t N);

/// Heads sized for pyramids of an h x w map; reference level m, target level n.
PairHeads make_pair_heads(ParameterSet& params, const std::string& prefix, CorrelationKind kind,
                          std::size_t N, std::size_t h, std::size_t w, std::size_t output_dim,
                          const HeadSpec& spec, std::mt19937_64& rng);

/// Sum over enumerate_pairs(N) of regress(pyr_ref[m], pyr_tar[n], heads[(m, n)]).
/// Returns zeros of length output_dim when N == 0.
Var cross_scale_offsets(const Pyramid& pyr_ref, const Pyramid& pyr_tar, const PairHeads& heads,
                        const BoundParameters& p, std::size_t output_dim);

Var combine_local(const Var& o_intra, const Var& o_cross);

}  // namespace meshalign
