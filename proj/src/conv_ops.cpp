// SPDX-License-Identifier: Apache-2.0
#include "conv_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace e2y::detail {

namespace {

// Bound on im2col scratch, in doubles.
constexpr std::size_t kColBudget = std::size_t{1} << 22;

void im2col(const FeatureMap &x, const ConvGeometry &g, std::size_t n0,
            std::size_t n1, std::size_t oh, std::size_t ow, Matrix &col) {
  const std::size_t c = x.c;
  col.setZero(static_cast<Eigen::Index>((n1 - n0) * oh * ow),
              static_cast<Eigen::Index>(g.kh * g.kw * c));
  const double *src = x.data.data();
  double *dst = col.data();
  const std::size_t col_w = g.kh * g.kw * c;
  for (std::size_t n = n0; n < n1; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double *row = dst + (((n - n0) * oh + oy) * ow + ox) * col_w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + ky) -
                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h))
            continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + kx) -
                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w))
              continue;
            const double *px = src + ((n * x.h + static_cast<std::size_t>(iy)) * x.w +
                                      static_cast<std::size_t>(ix)) * c;
            std::copy(px, px + c, row + (ky * g.kw + kx) * c);
          }
        }
      }
}

void col2im_add(const Matrix &col, const ConvGeometry &g, std::size_t n0,
                std::size_t n1, std::size_t oh, std::size_t ow, FeatureMap &dx) {
  const std::size_t c = dx.c;
  const std::size_t col_w = g.kh * g.kw * c;
  double *dst = dx.data.data();
  const double *src = col.data();
  for (std::size_t n = n0; n < n1; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double *row = src + (((n - n0) * oh + oy) * ow + ox) * col_w;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + ky) -
                    static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(dx.h))
            continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + kx) -
                      static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(dx.w))
              continue;
            double *px = dst + ((n * dx.h + static_cast<std::size_t>(iy)) * dx.w +
                                static_cast<std::size_t>(ix)) * c;
            const double *pc = row + (ky * g.kw + kx) * c;
            for (std::size_t ch = 0; ch < c; ++ch)
              px[ch] += pc[ch];
          }
        }
      }
}

std::size_t images_per_group(std::size_t oh, std::size_t ow, std::size_t col_w) {
  std::size_t per_image = std::max<std::size_t>(1, oh * ow * col_w);
  return std::max<std::size_t>(1, kColBudget / per_image);
}

} // namespace

Conv2d::Conv2d(const std::string &name, std::size_t cin, std::size_t cout,
               ConvGeometry geom, bool with_bias, bool propagate_input, Rng &rng)
  : cin_(cin), cout_(cout), g_(geom), with_bias_(with_bias),
    propagate_(propagate_input),
    weight_(name + ".weight", static_cast<Eigen::Index>(geom.kh * geom.kw * cin),
            static_cast<Eigen::Index>(cout)),
    bias_(name + ".bias", 1, static_cast<Eigen::Index>(cout)) {
  weight_.shape = {geom.kh, geom.kw, cin, cout};
  bias_.shape = {cout};
  // He-uniform: fan-in scaled for rectified-linear successors.
  double fan_in = static_cast<double>(geom.kh * geom.kw * cin);
  fill_uniform(weight_.value, std::sqrt(6.0 / fan_in), rng);
}

FeatureMap Conv2d::forward(const FeatureMap &x) {
  input_ = x;
  const std::size_t oh = g_.out_h(x.h), ow = g_.out_w(x.w);
  FeatureMap y(x.n, oh, ow, cout_);
  const std::size_t group = images_per_group(oh, ow, g_.kh * g_.kw * cin_);
  Matrix col;
  for (std::size_t n0 = 0; n0 < x.n; n0 += group) {
    std::size_t n1 = std::min(x.n, n0 + group);
    im2col(x, g_, n0, n1, oh, ow, col);
    y.data.middleRows(static_cast<Eigen::Index>(n0 * oh * ow), col.rows()).noalias() =
      col * weight_.value;
  }
  if (with_bias_)
    y.data.rowwise() += bias_.value.row(0);
  return y;
}

FeatureMap Conv2d::backward(const FeatureMap &grad) {
  const FeatureMap &x = input_;
  const std::size_t oh = grad.h, ow = grad.w;
  FeatureMap dx;
  if (propagate_)
    dx = FeatureMap(x.n, x.h, x.w, x.c);
  const std::size_t group = images_per_group(oh, ow, g_.kh * g_.kw * cin_);
  Matrix col, dcol;
  for (std::size_t n0 = 0; n0 < x.n; n0 += group) {
    std::size_t n1 = std::min(x.n, n0 + group);
    im2col(x, g_, n0, n1, oh, ow, col);
    auto g = grad.data.middleRows(static_cast<Eigen::Index>(n0 * oh * ow), col.rows());
    weight_.grad.noalias() += col.transpose() * g;
    if (propagate_) {
      dcol.noalias() = g * weight_.value.transpose();
      col2im_add(dcol, g_, n0, n1, oh, ow, dx);
    }
  }
  if (with_bias_)
    bias_.grad.row(0) += grad.data.colwise().sum();
  input_ = FeatureMap();
  return dx;
}

void Conv2d::collect(std::vector<Parameter *> &out) {
  out.push_back(&weight_);
  if (with_bias_)
    out.push_back(&bias_);
}

ChannelAffine::ChannelAffine(const std::string &name, std::size_t channels,
                             double init_scale)
  : scale_(name + ".scale", 1, static_cast<Eigen::Index>(channels)),
    shift_(name + ".shift", 1, static_cast<Eigen::Index>(channels)) {
  scale_.shape = {channels};
  shift_.shape = {channels};
  scale_.value.setConstant(init_scale);
}

FeatureMap ChannelAffine::forward(const FeatureMap &x) {
  input_ = x;
  FeatureMap y = x;
  y.data.array().rowwise() *= scale_.value.row(0).array();
  y.data.rowwise() += shift_.value.row(0);
  return y;
}

FeatureMap ChannelAffine::backward(const FeatureMap &grad) {
  scale_.grad.row(0) += (input_.data.array() * grad.data.array()).colwise().sum().matrix();
  shift_.grad.row(0) += grad.data.colwise().sum();
  FeatureMap dx = grad;
  dx.data.array().rowwise() *= scale_.value.row(0).array();
  input_ = FeatureMap();
  return dx;
}

void ChannelAffine::collect(std::vector<Parameter *> &out) {
  out.push_back(&scale_);
  out.push_back(&shift_);
}

FeatureMap Relu::forward(const FeatureMap &x) {
  output_ = x;
  output_.data = output_.data.cwiseMax(0.0);
  return output_;
}

FeatureMap Relu::backward(const FeatureMap &grad) {
  FeatureMap dx = grad;
  dx.data = (output_.data.array() > 0.0).select(grad.data, 0.0);
  output_ = FeatureMap();
  return dx;
}

FeatureMap MaxPool2d::forward(const FeatureMap &x) {
  in_n_ = x.n;
  in_h_ = x.h;
  in_w_ = x.w;
  in_c_ = x.c;
  const std::size_t oh = g_.out_h(x.h), ow = g_.out_w(x.w);
  FeatureMap y(x.n, oh, ow, x.c);
  argmax_.assign(static_cast<std::size_t>(y.data.size()), -1);
  const double *src = x.data.data();
  double *dst = y.data.data();
  for (std::size_t n = 0; n < x.n; ++n)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t out_base = ((n * oh + oy) * ow + ox) * x.c;
        for (std::size_t ch = 0; ch < x.c; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          Eigen::Index arg = -1;
          for (std::size_t ky = 0; ky < g_.kh; ++ky) {
            auto iy = static_cast<std::ptrdiff_t>(oy * g_.stride_h + ky) -
                      static_cast<std::ptrdiff_t>(g_.pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(x.h))
              continue;
            for (std::size_t kx = 0; kx < g_.kw; ++kx) {
              auto ix = static_cast<std::ptrdiff_t>(ox * g_.stride_w + kx) -
                        static_cast<std::ptrdiff_t>(g_.pad_left);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(x.w))
                continue;
              auto idx = static_cast<Eigen::Index>(
                ((n * x.h + static_cast<std::size_t>(iy)) * x.w +
                 static_cast<std::size_t>(ix)) * x.c + ch);
              if (src[idx] > best) {
                best = src[idx];
                arg = idx;
              }
            }
          }
          dst[out_base + ch] = best;
          argmax_[out_base + ch] = arg;
        }
      }
  return y;
}

FeatureMap MaxPool2d::backward(const FeatureMap &grad) {
  FeatureMap dx(in_n_, in_h_, in_w_, in_c_);
  const double *g = grad.data.data();
  double *d = dx.data.data();
  for (std::size_t i = 0; i < argmax_.size(); ++i)
    if (argmax_[i] >= 0)
      d[argmax_[i]] += g[i];
  return dx;
}

FeatureMap Sequential::forward(const FeatureMap &x) {
  FeatureMap cur = x;
  for (auto &op : ops_)
    cur = op->forward(cur);
  return cur;
}

FeatureMap Sequential::backward(const FeatureMap &grad) {
  FeatureMap cur = grad;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
    cur = (*it)->backward(cur);
  return cur;
}

void Sequential::collect(std::vector<Parameter *> &out) {
  for (auto &op : ops_)
    op->collect(out);
}

FeatureMap Residual::forward(const FeatureMap &x) {
  FeatureMap sum = branch_.forward(x);
  if (shortcut_.empty())
    sum.data += x.data;
  else
    sum.data += shortcut_.forward(x).data;
  return relu_.forward(sum);
}

FeatureMap Residual::backward(const FeatureMap &grad) {
  FeatureMap g = relu_.backward(grad);
  FeatureMap dx = branch_.backward(g);
  if (shortcut_.empty())
    dx.data += g.data;
  else
    dx.data += shortcut_.backward(g).data;
  return dx;
}

void Residual::collect(std::vector<Parameter *> &out) {
  branch_.collect(out);
  shortcut_.collect(out);
}

} // namespace e2y::detail
