// SPDX-License-Identifier: Apache-2.0
#include <e2y/error.hpp>
#include <e2y/visual_frontend.hpp>

#include "conv_ops.hpp"

namespace e2y {

using detail::ChannelAffine;
using detail::Conv2d;
using detail::ConvGeometry;
using detail::FeatureMap;
using detail::Sequential;

namespace {

constexpr std::array<std::size_t, 4> kBlocks18{2, 2, 2, 2};
constexpr std::array<std::size_t, 4> kBlocks50{3, 4, 6, 3};

std::size_t expansion(std::size_t depth) { return depth == 50 ? 4 : 1; }

} // namespace

void VisualFrontendSpec::validate() const {
  if (depth != 18 && depth != 50)
    throw ValidationError("visual frontend depth must be 18 or 50, got " +
                          std::to_string(depth));
  if (base_width < 1)
    throw ValidationError("visual frontend base_width must be >= 1");
  if (num_stages < 1 || num_stages > 4)
    throw ValidationError("visual frontend num_stages must be in 1..4");
}

std::size_t VisualFrontendSpec::output_dim() const {
  return base_width * (std::size_t{1} << (num_stages - 1)) * expansion(depth);
}

void check_visual_input(const VisualFrontendSpec &spec, std::size_t height,
                        std::size_t width, std::size_t channels) {
  spec.validate();
  if (height < kMinFrameSide || width < kMinFrameSide)
    throw ShapeError("visual frontend: frames of " + std::to_string(height) + "x" +
                     std::to_string(width) +
                     " are too small for the downsampling chain (minimum " +
                     std::to_string(kMinFrameSide) + "x" +
                     std::to_string(kMinFrameSide) + ")");
  if (channels < 1)
    throw ShapeError("visual frontend: frames need at least one channel");
}

namespace {

class VisualFrontend final : public Block {
public:
  VisualFrontend(const std::string &name, const VisualFrontendSpec &spec,
                 std::array<std::size_t, 3> shape, Rng &rng)
    : h_(shape[0]), w_(shape[1]), c_(shape[2]), width_(spec.output_dim()) {
    check_visual_input(spec, h_, w_, c_);
    const std::size_t base = spec.base_width;
    net_.add(std::make_unique<Conv2d>(name + "/stem.conv", c_, base,
                                      ConvGeometry::square(7, 2, 3), false, false, rng));
    net_.add(std::make_unique<ChannelAffine>(name + "/stem.norm", base, 1.0));
    net_.add(std::make_unique<detail::Relu>());
    net_.add(std::make_unique<detail::MaxPool2d>(ConvGeometry::square(3, 2, 1)));

    const auto &counts = spec.depth == 50 ? kBlocks50 : kBlocks18;
    const std::size_t exp = expansion(spec.depth);
    std::size_t cin = base;
    for (std::size_t s = 0; s < spec.num_stages; ++s) {
      const std::size_t planes = base << s;
      for (std::size_t b = 0; b < counts[s]; ++b) {
        const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
        const auto prefix =
          name + "/stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
        Sequential branch, shortcut;
        const std::size_t cout = planes * exp;
        if (spec.depth == 50) {
          branch.add(std::make_unique<Conv2d>(prefix + ".conv1", cin, planes,
                                              ConvGeometry::square(1, 1, 0), false, true, rng));
          branch.add(std::make_unique<ChannelAffine>(prefix + ".norm1", planes, 1.0));
          branch.add(std::make_unique<detail::Relu>());
          branch.add(std::make_unique<Conv2d>(prefix + ".conv2", planes, planes,
                                              ConvGeometry::square(3, stride, 1), false, true, rng));
          branch.add(std::make_unique<ChannelAffine>(prefix + ".norm2", planes, 1.0));
          branch.add(std::make_unique<detail::Relu>());
          branch.add(std::make_unique<Conv2d>(prefix + ".conv3", planes, cout,
                                              ConvGeometry::square(1, 1, 0), false, true, rng));
          branch.add(std::make_unique<ChannelAffine>(prefix + ".norm3", cout, 0.0));
        } else {
          branch.add(std::make_unique<Conv2d>(prefix + ".conv1", cin, planes,
                                              ConvGeometry::square(3, stride, 1), false, true, rng));
          branch.add(std::make_unique<ChannelAffine>(prefix + ".norm1", planes, 1.0));
          branch.add(std::make_unique<detail::Relu>());
          branch.add(std::make_unique<Conv2d>(prefix + ".conv2", planes, cout,
                                              ConvGeometry::square(3, 1, 1), false, true, rng));
          branch.add(std::make_unique<ChannelAffine>(prefix + ".norm2", cout, 0.0));
        }
        if (stride != 1 || cin != cout) {
          shortcut.add(std::make_unique<Conv2d>(prefix + ".proj", cin, cout,
                                                ConvGeometry::square(1, stride, 0), false,
                                                true, rng));
          shortcut.add(std::make_unique<ChannelAffine>(prefix + ".proj_norm", cout, 1.0));
        }
        net_.add(std::make_unique<detail::Residual>(std::move(branch), std::move(shortcut)));
        cin = cout;
      }
    }
  }

  Matrix forward(std::span<const Matrix *const> inputs, const StepMask &mask) override {
    const Matrix &x = *inputs[0];
    const std::size_t frame = h_ * w_ * c_;
    if (static_cast<std::size_t>(x.cols()) != frame)
      throw ShapeError("visual frontend expects frames of " + std::to_string(frame) +
                       " values, got " + std::to_string(x.cols()));
    rows_ = mask.valid_rows();
    FeatureMap fm(rows_.size(), h_, w_, c_);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      Eigen::Map<RowVector>(fm.data.data() + i * frame, static_cast<Eigen::Index>(frame)) =
        x.row(static_cast<Eigen::Index>(rows_[i])) / 255.0;
    FeatureMap y = net_.forward(fm);
    pooled_h_ = y.h;
    pooled_w_ = y.w;
    const double area = static_cast<double>(y.h * y.w);
    Matrix out = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(width_));
    const auto per_image = static_cast<Eigen::Index>(y.h * y.w);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      out.row(static_cast<Eigen::Index>(rows_[i])) =
        y.data.middleRows(static_cast<Eigen::Index>(i) * per_image, per_image)
          .colwise()
          .sum() /
        area;
    return out;
  }

  std::vector<Matrix> backward(const Matrix &grad_output) override {
    FeatureMap g(rows_.size(), pooled_h_, pooled_w_, width_);
    const auto per_image = static_cast<Eigen::Index>(pooled_h_ * pooled_w_);
    const double area = static_cast<double>(per_image);
    for (std::size_t i = 0; i < rows_.size(); ++i)
      g.data.middleRows(static_cast<Eigen::Index>(i) * per_image, per_image).rowwise() =
        grad_output.row(static_cast<Eigen::Index>(rows_[i])) / area;
    net_.backward(g);
    return {Matrix()};
  }

  std::vector<Parameter *> parameters() override {
    std::vector<Parameter *> out;
    net_.collect(out);
    return out;
  }

  std::size_t output_width() const override { return width_; }

private:
  std::size_t h_, w_, c_, width_;
  Sequential net_;
  std::vector<std::size_t> rows_;
  std::size_t pooled_h_ = 0, pooled_w_ = 0;
};

} // namespace

std::unique_ptr<Block> make_visual_frontend(const std::string &name,
                                            const VisualFrontendSpec &spec,
                                            std::array<std::size_t, 3> frame_shape,
                                            Rng &rng) {
  spec.validate();
  return std::make_unique<VisualFrontend>(name, spec, frame_shape, rng);
}

} // namespace e2y
