// SPDX-License-Identifier: Apache-2.0
/**
 * @file   conv_ops.hpp
 * @brief  Internal convolution / pooling primitives shared by the audio and
 *         visual frontends. Feature maps are NHWC with one matrix row per
 *         spatial position.
 */
#pragma once

#include <e2y/tensor.hpp>

#include <memory>
#include <string>
#include <vector>

namespace e2y::detail {

struct FeatureMap {
  std::size_t n = 0, h = 0, w = 0, c = 0;
  Matrix data; ///< (n*h*w) x c

  FeatureMap() = default;
  FeatureMap(std::size_t n_, std::size_t h_, std::size_t w_, std::size_t c_)
    : n(n_), h(h_), w(w_), c(c_),
      data(Matrix::Zero(static_cast<Eigen::Index>(n_ * h_ * w_),
                        static_cast<Eigen::Index>(c_))) {}
};

class Op {
public:
  virtual ~Op() = default;
  virtual FeatureMap forward(const FeatureMap &x) = 0;
  virtual FeatureMap backward(const FeatureMap &grad) = 0;
  virtual void collect(std::vector<Parameter *> &) {}
};

struct ConvGeometry {
  std::size_t kh = 1, kw = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_top = 0, pad_left = 0, pad_bottom = 0, pad_right = 0;

  std::size_t out_h(std::size_t h) const {
    return (h + pad_top + pad_bottom - kh) / stride_h + 1;
  }
  std::size_t out_w(std::size_t w) const {
    return (w + pad_left + pad_right - kw) / stride_w + 1;
  }
  static ConvGeometry square(std::size_t k, std::size_t stride, std::size_t pad) {
    return {k, k, stride, stride, pad, pad, pad, pad};
  }
  /// Stride-1 1-D convolution whose output length equals its input length.
  static ConvGeometry same_1d(std::size_t k) {
    return {1, k, 1, 1, 0, (k - 1) / 2, 0, k - 1 - (k - 1) / 2};
  }
};

class Conv2d : public Op {
public:
  Conv2d(const std::string &name, std::size_t cin, std::size_t cout,
         ConvGeometry geom, bool with_bias, bool propagate_input, Rng &rng);

  FeatureMap forward(const FeatureMap &x) override;
  FeatureMap backward(const FeatureMap &grad) override;
  void collect(std::vector<Parameter *> &out) override;

private:
  std::size_t cin_, cout_;
  ConvGeometry g_;
  bool with_bias_, propagate_;
  Parameter weight_, bias_;
  FeatureMap input_;
};

/// Per-channel affine transform y = x * scale + shift (normalization with
/// frozen statistics, so frames never influence each other).
class ChannelAffine : public Op {
public:
  ChannelAffine(const std::string &name, std::size_t channels, double init_scale);
  FeatureMap forward(const FeatureMap &x) override;
  FeatureMap backward(const FeatureMap &grad) override;
  void collect(std::vector<Parameter *> &out) override;

private:
  Parameter scale_, shift_;
  FeatureMap input_;
};

class Relu : public Op {
public:
  FeatureMap forward(const FeatureMap &x) override;
  FeatureMap backward(const FeatureMap &grad) override;

private:
  FeatureMap output_;
};

class MaxPool2d : public Op {
public:
  explicit MaxPool2d(ConvGeometry geom) : g_(geom) {}
  FeatureMap forward(const FeatureMap &x) override;
  FeatureMap backward(const FeatureMap &grad) override;

private:
  ConvGeometry g_;
  std::size_t in_n_ = 0, in_h_ = 0, in_w_ = 0, in_c_ = 0;
  std::vector<Eigen::Index> argmax_; ///< flat input index per output element
};

class Sequential : public Op {
public:
  void add(std::unique_ptr<Op> op) { ops_.push_back(std::move(op)); }
  bool empty() const { return ops_.empty(); }
  FeatureMap forward(const FeatureMap &x) override;
  FeatureMap backward(const FeatureMap &grad) override;
  void collect(std::vector<Parameter *> &out) override;

private:
  std::vector<std::unique_ptr<Op>> ops_;
};

/// relu(branch(x) + shortcut(x)); an empty shortcut is the identity.
class Residual : public Op {
public:
  Residual(Sequential branch, Sequential shortcut)
    : branch_(std::move(branch)), shortcut_(std::move(shortcut)) {}
  FeatureMap forward(const FeatureMap &x) override;
  FeatureMap backward(const FeatureMap &grad) override;
  void collect(std::vector<Parameter *> &out) override;

private:
  Sequential branch_, shortcut_;
  Relu relu_;
};

} // namespace e2y::detail
