#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "meshalign/autodiff.hpp"
#include "meshalign/nn.hpp"

namespace meshalign {

/// Per-position L2 normalisation over the channel axis of a [c,h,w] map.
/// Vectors with norm below 1e-12 are divided by 1e-12 instead.
Var normalize_channels(const Var& f);

/// T[k,l,i,j] = <f_tar[:,k,l], f_ref[:,i,j]>, shaped [h2,w2,h1,w1].
Var corr4d(const Var& f_ref, const Var& f_tar, bool normalize = true);
NdArray corr4d(const NdArray& f_ref, const NdArray& f_tar, bool normalize = true);

/// T1 [h2*w2, h1, w1] and T2 [h1*w1, h2, w2].
std::pair<Var, Var> reshape_branches(const Var& T);

enum class CorrelationKind { Fsc, Cl, Ccl };

const char* to_string(CorrelationKind kind);
/// Accepts "fsc", "cl", "ccl" (case-insensitive).
CorrelationKind parse_correlation_kind(const std::string& text);

struct HeadSpec {
  std::size_t compressed_channels = 64;  // c_r
  std::size_t trunk_channels = 64;
  std::size_t trunk_layers = 3;
  std::size_t hidden = 128;
  bool normalize = true;
};

/// Regression head over the correlation of a [c,h1,w1] reference map and a
/// [c,h2,w2] target map. The final linear layer is zero-initialised.
struct FscHead {
  CorrelationKind kind = CorrelationKind::Fsc;
  std::size_t h1 = 0, w1 = 0, h2 = 0, w2 = 0;
  std::size_t output_dim = 0;
  HeadSpec spec;
  ConvLayer t1_reduce, t1_refine;
  ConvLayer t2_reduce, t2_refine;  // unused for Cl
  std::vector<ConvLayer> trunk;
  LinearLayer hidden, output;

  std::size_t trunk_input_h() const;
  std::size_t trunk_input_w() const;
};

/// Adds the head's parameters to `params` under `prefix`. Kind must be Fsc or Cl.
FscHead make_head(ParameterSet& params, const std::string& prefix, CorrelationKind kind,
                  std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2,
                  std::size_t output_dim, const HeadSpec& spec, std::mt19937_64& rng);

/// Runs the head on features; dispatches on head.kind.
Var regress(const FscHead& head, const BoundParameters& p, const Var& f_ref, const Var& f_tar);
Var fsc_regress(const FscHead& head, const BoundParameters& p, const Var& f_ref,
                const Var& f_tar);
Var cl_regress(const FscHead& head, const BoundParameters& p, const Var& f_ref,
               const Var& f_tar);

struct FlopsQuery {
  std::size_t c = 64;
  std::size_t h1 = 32, w1 = 32, h2 = 32, w2 = 32;
  std::size_t c_r = 64;
  HeadSpec head;
  std::size_t output_dim = 8;
  std::size_t ccl_kernel = 3;
};

/// Multiply-add based count (2 flops per MAC) of one head evaluation,
/// correlation included.
std::uint64_t flops_estimate(CorrelationKind kind, const FlopsQuery& q);

/// Individual terms, exposed for reporting.
std::uint64_t corr4d_flops(std::size_t c, std::size_t h1, std::size_t w1, std::size_t h2,
                           std::size_t w2);
std::uint64_t conv_flops(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t ho,
                         std::size_t wo);

}  // namespace meshalign
