// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  Concordance correlation coefficient as metric and training loss.
 *
 *   CCC = 2 cov(p, g) / (var(p) + var(g) + (mean(p) - mean(g))^2)
 *
 * with population (1/N) statistics over the valid steps. Two constant,
 * equal series score 1.
 */
#pragma once

#include <e2y/tensor.hpp>

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace e2y {

double ccc(std::span<const double> pred, std::span<const double> gold);
/// Only steps with a nonzero mask entry participate.
double ccc(std::span<const double> pred, std::span<const double> gold,
           std::span<const std::uint8_t> mask);

/// CCC and d(CCC)/d(pred) over all entries.
double ccc_with_gradient(std::span<const double> pred, std::span<const double> gold,
                         std::span<double> grad_pred);

enum class LossPooling { batch, per_sequence };
LossPooling loss_pooling_from_string(const std::string &s);
std::string to_string(LossPooling p);

struct LossResult {
  double loss = 0.0;
  Matrix grad;                 ///< d(loss)/d(pred), zero at masked rows
  std::vector<double> per_dim; ///< CCC per label dimension (ccc loss only)
};

/// (1/K) sum_k (1 - CCC_k). `batch` pools every valid step of the batch per
/// dimension; `per_sequence` averages the CCC of each row of the batch
/// (sequences with fewer than two valid steps are skipped).
LossResult ccc_loss(const Matrix &pred, const Matrix &gold, const StepMask &mask,
                    LossPooling pooling = LossPooling::batch);

/// Softmax cross-entropy against per-step target distributions, averaged
/// over valid steps.
LossResult cross_entropy_loss(const Matrix &pred, const Matrix &gold, const StepMask &mask);

/// One subject's full-length predictions and gold labels (steps x dims).
struct SessionSeries {
  std::string subject_id;
  Matrix pred;
  Matrix gold;
};

enum class SessionPooling { concatenate, per_subject };
SessionPooling session_pooling_from_string(const std::string &s);
std::string to_string(SessionPooling p);

struct ScoreReport {
  std::vector<std::string> label_names;
  std::vector<double> ccc;
  double mean = 0.0;
  std::size_t steps = 0;
  std::size_t subjects = 0;
  SessionPooling pooling = SessionPooling::concatenate;
  bool postprocessed = false;

  nlohmann::json to_json() const;
  std::string table() const;
};

ScoreReport evaluate_sessions(std::span<const SessionSeries> sessions,
                              const std::vector<std::string> &label_names,
                              SessionPooling pooling = SessionPooling::concatenate);

/// Column `dim` of every session, concatenated in order.
std::vector<double> concat_column(std::span<const SessionSeries> sessions, std::size_t dim,
                                  bool gold);

} // namespace e2y
