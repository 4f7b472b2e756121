#pragma once

#include "unfoldseg/tensor.hpp"

namespace unfoldseg {

/// Channel count of the fixed feature stack.
inline constexpr int kFeatureChannels = 6;

/// Deterministic hand-crafted feature stack standing in for a learned
/// encoder. Channels, in order:
///   0..2  intensity (RGB, or the gray channel replicated)
///   3     gradient magnitude of the luma (central differences), halved
///   4     gradient magnitude after a 3x3 box smoothing, halved
///   5     5x5 local variance of the luma, scaled by 4
/// All channels land roughly in [0, 1]. Pure function of the image.
Tensor feature_bank(const Tensor& image);

}  // namespace unfoldseg
