// SPDX-License-Identifier: Apache-2.0
#include <e2y/blocks.hpp>
#include <e2y/error.hpp>

#include <cmath>
#include <numbers>

#include <Eigen/QR>

namespace e2y {

double standard_normal(Rng &rng) {
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 <= 0.0)
    u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void fill_uniform(Matrix &m, double limit, Rng &rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = uniform(rng, -limit, limit);
}

Matrix random_orthogonal(Eigen::Index n, Rng &rng) {
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      g(i, j) = standard_normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0)
      q.col(j) *= -1.0;
  return q;
}

void zero_masked_rows(Matrix &m, const StepMask &mask) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if (!mask.on(static_cast<std::size_t>(r)))
      m.row(r).setZero();
}

Activation activation_from_string(const std::string &s) {
  if (s == "linear" || s == "none")
    return Activation::linear;
  if (s == "relu")
    return Activation::relu;
  if (s == "tanh")
    return Activation::tanh;
  if (s == "sigmoid")
    return Activation::sigmoid;
  throw ValidationError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  switch (a) {
  case Activation::linear:
    return "linear";
  case Activation::relu:
    return "relu";
  case Activation::tanh:
    return "tanh";
  case Activation::sigmoid:
    return "sigmoid";
  }
  return "linear";
}

void apply_activation(Activation a, Matrix &m) {
  switch (a) {
  case Activation::linear:
    break;
  case Activation::relu:
    m = m.cwiseMax(0.0);
    break;
  case Activation::tanh:
    m = m.array().tanh().matrix();
    break;
  case Activation::sigmoid:
    m = (1.0 / (1.0 + (-m.array()).exp())).matrix();
    break;
  }
}

void activation_backward(Activation a, const Matrix &y, Matrix &grad) {
  switch (a) {
  case Activation::linear:
    break;
  case Activation::relu:
    grad = (y.array() > 0.0).select(grad, 0.0);
    break;
  case Activation::tanh:
    grad.array() *= 1.0 - y.array().square();
    break;
  case Activation::sigmoid:
    grad.array() *= y.array() * (1.0 - y.array());
    break;
  }
}

} // namespace e2y
