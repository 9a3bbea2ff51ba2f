#pragma once

#include "meshalign/geometry.hpp"
#include "meshalign/imaging.hpp"
#include "meshalign/model.hpp"

namespace meshalign {

/// Mean over every element of [c,h,w] of relu(|ref - warped|*mask - jnd*mask).
/// jnd has one channel (broadcast) or as many channels as the images.
Var l_jnd(const Var& ref, const Var& warped, const Image& jnd, const Mask& mask);

/// Mean over every element of |ref*mask - warped*mask|.
Var masked_l1(const Var& ref, const Var& warped, const Mask& mask);

struct StageWarp {
  Var warped;
  Mask mask;
};

Var l_content(const Var& ref, const StageWarp& homography, const StageWarp& mesh,
              double lambda_h = 1.0, double lambda_m = 1.0);

constexpr double kShapeLossCap = 1e3;

/// Collinearity of consecutive same-direction edges plus edge-length
/// preservation against `regular`. A zero-length edge yields `cap` with no
/// gradient.
Var l_shape(const Var& mesh, const Mesh& regular, double cap = kShapeLossCap);
double l_shape(const Mesh& mesh, const Mesh& regular, double cap = kShapeLossCap);

struct LossWeights {
  double alpha = 10.0;
  double beta = 1.0;
  double lambda_h = 1.0;
  double lambda_m = 1.0;
};

struct LossBreakdown {
  double l_content = 0.0;
  double l_shape = 0.0;
  double l_jnd = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
};

struct LossTerms {
  Var content, shape, jnd, total;
  LossBreakdown breakdown(const LossWeights& w) const;
};

/// total = content + alpha*shape + beta*jnd; the JND term uses the mesh stage.
LossTerms total_loss(const ForwardOutput& out, const Var& ref, const Mesh& regular,
                     const Image& jnd, const LossWeights& weights);

}  // namespace meshalign
