// SPDX-License-Identifier: Apache-2.0
/**
 * @file   recurrent.hpp
 * @brief  Stacked GRU / LSTM over the time axis with prefix masking.
 *
 * GRU (gate order z, r, n):
 *   z = sig(x Wz + h Uz + bz),  r = sig(x Wr + h Ur + br)
 *   n = tanh(x Wn + (r * h) Un + bn),  h' = (1 - z) * n + z * h
 * LSTM (gate order i, f, g, o):
 *   c' = f * c + i * g,  h' = o * tanh(c')
 *
 * A masked step keeps the previous state and emits a zero row.
 */
#pragma once

#include <e2y/blocks.hpp>

#include <memory>

namespace e2y {

enum class CellKind { gru, lstm };

CellKind cell_kind_from_string(const std::string &s);
std::string to_string(CellKind c);

struct RecurrentSpec {
  CellKind cell = CellKind::gru;
  std::size_t num_layers = 1;
  std::size_t hidden_units = 64;

  void validate() const;
};

std::unique_ptr<Block> make_recurrent(const std::string &name, const RecurrentSpec &spec,
                                      std::size_t input_width, Rng &rng);

} // namespace e2y
