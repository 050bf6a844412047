// SPDX-License-Identifier: Apache-2.0
/**
 * @file   fully_connected.hpp
 * @brief  Per-timestep stack of affine layers.
 */
#pragma once

#include <e2y/blocks.hpp>

#include <memory>
#include <vector>

namespace e2y {

struct DenseLayerSpec {
  std::size_t width = 1;
  Activation activation = Activation::relu;
};

struct FullyConnectedSpec {
  std::vector<DenseLayerSpec> layers;
  bool head = false; ///< forces the last layer to be linear

  void validate() const;
  std::size_t output_width() const { return layers.back().width; }
};

std::unique_ptr<Block> make_fully_connected(const std::string &name,
                                            const FullyConnectedSpec &spec,
                                            std::size_t input_width, Rng &rng);

/// Feature-axis concatenation of several row-aligned streams.
std::unique_ptr<Block> make_concat(std::vector<std::size_t> input_widths);

} // namespace e2y
