// SPDX-License-Identifier: Apache-2.0
/**
 * @file   audio_frontend.hpp
 * @brief  Raw-waveform convolutional frontend.
 *
 * Each conv/pool block is: 1-D convolution (stride 1, same-length padding,
 * with bias) -> activation -> non-overlapping max-pooling. The default
 * configuration has two blocks, 40 filters of width 20 pooled by 2 and
 * 40 filters of width 40 pooled by 10, so a chunk of L samples yields
 * 40 x L/20 features. Features are flattened time-major: index t * 40 + c.
 */
#pragma once

#include <e2y/blocks.hpp>

#include <memory>
#include <vector>

namespace e2y {

struct ConvPoolSpec {
  std::size_t num_filters = 40;
  std::size_t kernel_size = 20;
  std::size_t pool_size = 2;
};

struct AudioFrontendSpec {
  std::vector<ConvPoolSpec> blocks{{40, 20, 2}, {40, 40, 10}};
  Activation activation = Activation::relu;

  void validate() const;
};

/// F = last.num_filters * L / prod(pool sizes). Throws ShapeError naming the
/// block whose pooling does not divide its input length.
std::size_t audio_feature_width(const AudioFrontendSpec &spec,
                                std::size_t chunk_length);

/// Temporal length after each block, for diagnostics and plan output.
std::vector<std::size_t> audio_block_lengths(const AudioFrontendSpec &spec,
                                             std::size_t chunk_length);

std::unique_ptr<Block> make_audio_frontend(const std::string &name,
                                           const AudioFrontendSpec &spec,
                                           std::size_t chunk_length, Rng &rng);

} // namespace e2y
