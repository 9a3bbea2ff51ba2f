#pragma once

#include "meshalign/imaging.hpp"

namespace meshalign {

// Pixel-domain JND model: luminance adaptation plus contrast masking,
// fused with overlap coefficient 0.3. All maps are single-channel, in
// [0,1] intensity units; 5x5 windows replicate edges.

/// Input must be single-channel.
Image luminance_adaptation(const Image& luma);
Image contrast_masking(const Image& luma);

/// Luminance adaptation for a background level in [0,255]; result in [0,1] units.
double luminance_threshold(double background);

/// Accepts 1- or 3-channel images; works on luma.
Image jnd_map(const Image& img);

}  // namespace meshalign
