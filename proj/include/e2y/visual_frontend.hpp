// SPDX-License-Identifier: Apache-2.0
/**
 * @file   visual_frontend.hpp
 * @brief  Residual-network frame encoder (18-layer basic or 50-layer
 *         bottleneck topology) ending in global average pooling.
 *
 * Normalization layers are per-channel affine maps with learned scale and
 * shift; they never pool statistics across frames, so each frame's features
 * depend only on that frame. The last affine map of each residual branch
 * starts at zero scale, so every block is initially the identity.
 */
#pragma once

#include <e2y/blocks.hpp>

#include <array>
#include <memory>

namespace e2y {

struct VisualFrontendSpec {
  std::size_t depth = 50;
  std::size_t base_width = 64; ///< channels of the stem and the first stage
  std::size_t num_stages = 4;  ///< 1-4; fewer stages give a shallower variant

  void validate() const;
  /// Channel count of the last stage (the pooled feature width).
  std::size_t output_dim() const;
};

/// Smallest height/width accepted.
inline constexpr std::size_t kMinFrameSide = 32;

/// Validates a [H, W, C] frame shape against the downsampling chain.
void check_visual_input(const VisualFrontendSpec &spec, std::size_t height,
                        std::size_t width, std::size_t channels);

std::unique_ptr<Block> make_visual_frontend(const std::string &name,
                                            const VisualFrontendSpec &spec,
                                            std::array<std::size_t, 3> frame_shape,
                                            Rng &rng);

} // namespace e2y
