// SPDX-License-Identifier: Apache-2.0
#include <e2y/audio_frontend.hpp>
#include <e2y/error.hpp>

#include "conv_ops.hpp"

namespace e2y {

using detail::ConvGeometry;
using detail::FeatureMap;

void AudioFrontendSpec::validate() const {
  if (blocks.empty())
    throw ValidationError("audio frontend needs at least one conv/pool block");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto &b = blocks[i];
    if (b.num_filters < 1 || b.kernel_size < 1 || b.pool_size < 1)
      throw ValidationError("audio frontend block " + std::to_string(i + 1) +
                            ": num_filters, kernel_size and pool_size must be >= 1");
  }
}

std::vector<std::size_t> audio_block_lengths(const AudioFrontendSpec &spec,
                                             std::size_t chunk_length) {
  spec.validate();
  std::vector<std::size_t> lengths;
  std::size_t len = chunk_length;
  if (len == 0)
    throw ShapeError("audio frontend: chunk length must be >= 1");
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    auto pool = spec.blocks[i].pool_size;
    if (len % pool != 0)
      throw ShapeError("audio frontend block " + std::to_string(i + 1) +
                       ": input length " + std::to_string(len) +
                       " is not divisible by pool size " + std::to_string(pool));
    len /= pool;
    lengths.push_back(len);
  }
  return lengths;
}

std::size_t audio_feature_width(const AudioFrontendSpec &spec,
                                std::size_t chunk_length) {
  auto lengths = audio_block_lengths(spec, chunk_length);
  return lengths.back() * spec.blocks.back().num_filters;
}

namespace {

class AudioFrontend final : public Block {
public:
  AudioFrontend(const std::string &name, const AudioFrontendSpec &spec,
                std::size_t chunk_length, Rng &rng)
    : length_(chunk_length), width_(audio_feature_width(spec, chunk_length)) {
    std::size_t cin = 1;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
      const auto &b = spec.blocks[i];
      auto prefix = name + "/block" + std::to_string(i + 1);
      ops_.add(std::make_unique<detail::Conv2d>(
        prefix + ".conv", cin, b.num_filters, ConvGeometry::same_1d(b.kernel_size),
        true, i > 0, rng));
      if (spec.activation == Activation::relu)
        ops_.add(std::make_unique<detail::Relu>());
      else if (spec.activation != Activation::linear)
        throw ValidationError("audio frontend supports relu or linear activations");
      ops_.add(std::make_unique<detail::MaxPool2d>(
        ConvGeometry{1, b.pool_size, 1, b.pool_size, 0, 0, 0, 0}));
      cin = b.num_filters;
    }
  }

  Matrix forward(std::span<const Matrix *const> inputs, const StepMask &mask) override {
    const Matrix &x = *inputs[0];
    if (static_cast<std::size_t>(x.cols()) != length_)
      throw ShapeError("audio frontend expects chunks of " + std::to_string(length_) +
                       " samples, got " + std::to_string(x.cols()));
    rows_ = mask.valid_rows();
    total_rows_ = x.rows();
    FeatureMap fm(rows_.size(), 1, length_, 1);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      Eigen::Map<RowVector>(fm.data.data() + i * length_, static_cast<Eigen::Index>(length_)) =
        x.row(static_cast<Eigen::Index>(rows_[i]));
    FeatureMap y = ops_.forward(fm);
    Matrix out = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(width_));
    for (std::size_t i = 0; i < rows_.size(); ++i)
      out.row(static_cast<Eigen::Index>(rows_[i])) =
        Eigen::Map<const RowVector>(y.data.data() + i * width_, static_cast<Eigen::Index>(width_));
    out_h_ = y.h;
    out_w_ = y.w;
    out_c_ = y.c;
    return out;
  }

  std::vector<Matrix> backward(const Matrix &grad_output) override {
    FeatureMap g(rows_.size(), out_h_, out_w_, out_c_);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      Eigen::Map<RowVector>(g.data.data() + i * width_, static_cast<Eigen::Index>(width_)) =
        grad_output.row(static_cast<Eigen::Index>(rows_[i]));
    ops_.backward(g);
    return {Matrix()};
  }

  std::vector<Parameter *> parameters() override {
    std::vector<Parameter *> out;
    ops_.collect(out);
    return out;
  }

  std::size_t output_width() const override { return width_; }

private:
  std::size_t length_, width_;
  detail::Sequential ops_;
  std::vector<std::size_t> rows_;
  Eigen::Index total_rows_ = 0;
  std::size_t out_h_ = 0, out_w_ = 0, out_c_ = 0;
};

} // namespace

std::unique_ptr<Block> make_audio_frontend(const std::string &name,
                                           const AudioFrontendSpec &spec,
                                           std::size_t chunk_length, Rng &rng) {
  return std::make_unique<AudioFrontend>(name, spec, chunk_length, rng);
}

} // namespace e2y
