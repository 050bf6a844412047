// SPDX-License-Identifier: Apache-2.0
/**
 * @file   postprocess.hpp
 * @brief  Prediction smoothing chain: median filter, centering, scaling and
 *         time shift, plus a greedy fit of its parameters on held-out data.
 */
#pragma once

#include <e2y/metrics.hpp>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace e2y {

/// Centered running median with edge replication. `window` must be odd.
std::vector<double> median_filter(std::span<const double> series, std::size_t window);
/// series - mean(series) + target_mean
std::vector<double> center(std::span<const double> series, double target_mean);
/// mean + (series - mean) * target_std / std(series), population std.
std::vector<double> scale(std::span<const double> series, double target_std);
/// out[i] = series[i - d] for i >= d, series[0] before; length preserved.
std::vector<double> time_shift(std::span<const double> series, long d);

struct DimensionParams {
  std::size_t median_window = 1;
  bool apply_center = false;
  double center_target_mean = 0.0;
  bool apply_scale = false;
  double scale_target_std = 1.0;
  std::size_t shift_steps = 0;
  double dev_ccc_before = 0.0;
  double dev_ccc_after = 0.0;

  bool is_identity() const {
    return median_window == 1 && !apply_center && !apply_scale && shift_steps == 0;
  }
};

struct FitGrids {
  std::vector<std::size_t> median_windows; ///< default 1, 3, ..., 51
  std::vector<std::size_t> shifts;         ///< default 0..100

  static FitGrids defaults();
};

/// Mean and population std of a training-partition gold series.
struct TargetStats {
  double mean = 0.0;
  double std = 1.0;
};

struct PostProcessParams {
  std::vector<std::string> label_names;
  std::vector<DimensionParams> dims;
  FitGrids grids;

  nlohmann::json to_json() const;
  static PostProcessParams from_json(const nlohmann::json &j);
  void save(const std::filesystem::path &path) const;
  static PostProcessParams load(const std::filesystem::path &path);
};

/// Applies steps (i)-(iv) to every subject's column. Median filter and shift
/// act per subject; centering and scaling use statistics pooled over all
/// subjects' series.
std::vector<std::vector<double>> apply_chain(const DimensionParams &params,
                                             const std::vector<std::vector<double>> &series);

/// Applies every dimension's chain to the prediction matrices.
std::vector<SessionSeries> apply_postprocess(const PostProcessParams &params,
                                             std::span<const SessionSeries> sessions);

/// Greedy fit in chain order, each step maximizing pooled dev CCC given the
/// steps already fixed; ties keep the smaller parameter / the identity.
PostProcessParams fit_postprocess(std::span<const SessionSeries> dev,
                                  const std::vector<std::string> &label_names,
                                  std::span<const TargetStats> targets,
                                  const FitGrids &grids = FitGrids::defaults());

/// Per-dimension mean/std of gold labels across sessions (concatenated).
std::vector<TargetStats> gold_statistics(std::span<const SessionSeries> sessions);

} // namespace e2y
