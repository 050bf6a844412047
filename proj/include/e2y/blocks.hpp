// SPDX-License-Identifier: Apache-2.0
/**
 * @file   blocks.hpp
 * @brief  Common interface for trainable model blocks.
 */
#pragma once

#include <e2y/tensor.hpp>

#include <span>
#include <string>
#include <vector>

namespace e2y {

enum class Activation { linear, relu, tanh, sigmoid };

Activation activation_from_string(const std::string &s);
std::string to_string(Activation a);

/// Applies `a` elementwise in place.
void apply_activation(Activation a, Matrix &m);
/// Multiplies `grad` by the derivative of `a`, given the activated output.
void activation_backward(Activation a, const Matrix &output, Matrix &grad);

/// A differentiable function of one or more row-aligned input streams.
///
/// `forward` caches whatever `backward` needs; `backward` must be called at
/// most once per `forward`, accumulates into each parameter's `grad` and
/// returns one gradient per input (an empty matrix where the input does not
/// need one, e.g. raw frames).
class Block {
public:
  virtual ~Block() = default;

  virtual Matrix forward(std::span<const Matrix *const> inputs,
                         const StepMask &mask) = 0;
  virtual std::vector<Matrix> backward(const Matrix &grad_output) = 0;
  virtual std::vector<Parameter *> parameters() { return {}; }
  virtual std::size_t output_width() const = 0;

  Matrix forward(const Matrix &input, const StepMask &mask) {
    const Matrix *ptr = &input;
    return forward(std::span<const Matrix *const>(&ptr, 1), mask);
  }
};

} // namespace e2y
