// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.hpp
 * @brief  Dense storage conventions used between blocks.
 *
 * Every stream flowing through a model graph is a row-major matrix with one
 * row per (sequence, timestep) pair: row `b * seq_len + t`. Spatial inputs
 * keep their frame flattened along the columns.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace e2y {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Prefix-form validity mask over [batch, seq].
struct StepMask {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint8_t> values; ///< row-major, 1 = valid

  static StepMask full(std::size_t batch, std::size_t seq) {
    return {batch, seq, std::vector<std::uint8_t>(batch * seq, 1)};
  }
  std::size_t rows() const { return batch * seq; }
  bool on(std::size_t row) const { return values[row] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : values)
      n += v;
    return n;
  }
  /// Indices of valid rows in ascending order.
  std::vector<std::size_t> valid_rows() const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < values.size(); ++r)
      if (values[r])
        out.push_back(r);
    return out;
  }
};

/// Trainable tensor. `shape` is the logical shape recorded in checkpoints;
/// the values live in a matrix whose size equals the product of `shape`.
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
    : name(std::move(n)),
      shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)},
      value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) built from 53 random bits; independent of the
/// standard library's distribution implementations.
inline double uniform01(Rng &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng &rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal via Box-Muller.
double standard_normal(Rng &rng);

/// Fills with U(-limit, limit).
void fill_uniform(Matrix &m, double limit, Rng &rng);

/// Square orthogonal matrix from the QR decomposition of a Gaussian matrix.
Matrix random_orthogonal(Eigen::Index n, Rng &rng);

/// Zeroes rows whose mask entry is 0.
void zero_masked_rows(Matrix &m, const StepMask &mask);

} // namespace e2y
