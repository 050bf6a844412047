// SPDX-License-Identifier: Apache-2.0
#include <e2y/error.hpp>
#include <e2y/postprocess.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace e2y {

namespace {

double mean_of(std::span<const double> s) {
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

double pop_std(std::span<const double> s, double mean) {
  double acc = 0.0;
  for (double v : s)
    acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(s.size()));
}

std::vector<double> flatten(const std::vector<std::vector<double>> &parts) {
  std::vector<double> out;
  for (const auto &p : parts)
    out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<std::vector<double>> split_like(const std::vector<double> &flat,
                                            const std::vector<std::vector<double>> &shape) {
  std::vector<std::vector<double>> out;
  std::size_t pos = 0;
  for (const auto &p : shape) {
    out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                     flat.begin() + static_cast<std::ptrdiff_t>(pos + p.size()));
    pos += p.size();
  }
  return out;
}

} // namespace

std::vector<double> median_filter(std::span<const double> series, std::size_t window) {
  if (window < 1 || window % 2 == 0)
    throw ParameterError("median window must be odd and >= 1, got " + std::to_string(window));
  std::vector<double> out(series.begin(), series.end());
  if (window == 1 || series.empty())
    return out;
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> buf(window);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t k = -half; k <= half; ++k)
      buf[static_cast<std::size_t>(k + half)] =
        series[static_cast<std::size_t>(std::clamp(i + k, std::ptrdiff_t{0}, n - 1))];
    std::nth_element(buf.begin(), buf.begin() + half, buf.end());
    out[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(half)];
  }
  return out;
}

std::vector<double> center(std::span<const double> series, double target_mean) {
  std::vector<double> out(series.begin(), series.end());
  if (series.empty())
    return out;
  const double m = mean_of(series);
  for (auto &v : out)
    v = v - m + target_mean;
  return out;
}

std::vector<double> scale(std::span<const double> series, double target_std) {
  if (!(target_std >= 0.0))
    throw ParameterError("scale target std must be >= 0");
  std::vector<double> out(series.begin(), series.end());
  if (series.empty())
    return out;
  const double m = mean_of(series);
  const double s = pop_std(series, m);
  if (s == 0.0) {
    if (target_std == 0.0)
      return out;
    throw DegenerateScaleError("cannot scale a constant series to std " +
                               std::to_string(target_std));
  }
  const double ratio = target_std / s;
  for (auto &v : out)
    v = m + (v - m) * ratio;
  return out;
}

std::vector<double> time_shift(std::span<const double> series, long d) {
  if (d < 0 || static_cast<std::size_t>(d) >= std::max<std::size_t>(series.size(), 1) ||
      (series.empty() && d != 0))
    throw ParameterError("time shift " + std::to_string(d) + " outside [0, " +
                         std::to_string(series.size()) + ")");
  std::vector<double> out(series.size());
  const auto shift = static_cast<std::size_t>(d);
  for (std::size_t i = 0; i < series.size(); ++i)
    out[i] = i >= shift ? series[i - shift] : series[0];
  return out;
}

FitGrids FitGrids::defaults() {
  FitGrids g;
  for (std::size_t w = 1; w <= 51; w += 2)
    g.median_windows.push_back(w);
  for (std::size_t d = 0; d <= 100; ++d)
    g.shifts.push_back(d);
  return g;
}

std::vector<std::vector<double>> apply_chain(const DimensionParams &p,
                                             const std::vector<std::vector<double>> &series) {
  std::vector<std::vector<double>> cur;
  for (const auto &s : series)
    cur.push_back(median_filter(s, p.median_window));
  if (p.apply_center)
    cur = split_like(center(flatten(cur), p.center_target_mean), cur);
  if (p.apply_scale)
    cur = split_like(scale(flatten(cur), p.scale_target_std), cur);
  if (p.shift_steps > 0)
    for (auto &s : cur)
      s = time_shift(s, static_cast<long>(p.shift_steps));
  return cur;
}

namespace {

std::vector<std::vector<double>> columns(std::span<const SessionSeries> sessions,
                                         std::size_t dim, bool gold) {
  std::vector<std::vector<double>> out;
  for (const auto &s : sessions) {
    const Matrix &m = gold ? s.gold : s.pred;
    std::vector<double> col(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      col[static_cast<std::size_t>(i)] = m(i, static_cast<Eigen::Index>(dim));
    out.push_back(std::move(col));
  }
  return out;
}

} // namespace

std::vector<SessionSeries> apply_postprocess(const PostProcessParams &params,
                                             std::span<const SessionSeries> sessions) {
  std::vector<SessionSeries> out(sessions.begin(), sessions.end());
  for (std::size_t k = 0; k < params.dims.size(); ++k) {
    auto processed = apply_chain(params.dims[k], columns(sessions, k, false));
    for (std::size_t s = 0; s < out.size(); ++s)
      for (std::size_t i = 0; i < processed[s].size(); ++i)
        out[s].pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          processed[s][i];
  }
  return out;
}

std::vector<TargetStats> gold_statistics(std::span<const SessionSeries> sessions) {
  std::vector<TargetStats> out;
  if (sessions.empty())
    return out;
  for (Eigen::Index k = 0; k < sessions[0].gold.cols(); ++k) {
    auto col = concat_column(sessions, static_cast<std::size_t>(k), true);
    TargetStats t;
    t.mean = mean_of(col);
    t.std = pop_std(col, t.mean);
    out.push_back(t);
  }
  return out;
}

PostProcessParams fit_postprocess(std::span<const SessionSeries> dev,
                                  const std::vector<std::string> &label_names,
                                  std::span<const TargetStats> targets,
                                  const FitGrids &grids) {
  if (dev.empty())
    throw ParameterError("post-processing fit needs a non-empty development set");
  if (grids.median_windows.empty() || grids.shifts.empty())
    throw ParameterError("post-processing grids must not be empty");
  for (auto w : grids.median_windows)
    if (w % 2 == 0)
      throw ParameterError("median window grid contains even value " + std::to_string(w));
  if (targets.size() != label_names.size())
    throw ParameterError("need one target statistic per label dimension");

  std::size_t min_len = static_cast<std::size_t>(dev[0].pred.rows());
  for (const auto &s : dev)
    min_len = std::min(min_len, static_cast<std::size_t>(s.pred.rows()));

  PostProcessParams params;
  params.label_names = label_names;
  params.grids = grids;
  std::vector<std::size_t> windows = grids.median_windows;
  std::vector<std::size_t> shifts = grids.shifts;
  windows.push_back(1);
  shifts.push_back(0);
  std::sort(windows.begin(), windows.end());
  windows.erase(std::unique(windows.begin(), windows.end()), windows.end());
  std::sort(shifts.begin(), shifts.end());
  shifts.erase(std::unique(shifts.begin(), shifts.end()), shifts.end());

  for (std::size_t k = 0; k < label_names.size(); ++k) {
    const auto preds = columns(dev, k, false);
    const auto gold = flatten(columns(dev, k, true));
    auto score = [&](const DimensionParams &p) {
      return ccc(flatten(apply_chain(p, preds)), gold);
    };
    DimensionParams best;
    best.center_target_mean = targets[k].mean;
    best.scale_target_std = targets[k].std;
    double best_score = score(best);
    best.dev_ccc_before = best_score;

    // (i) median window; ascending so ties keep the smaller window
    for (auto w : windows) {
      DimensionParams cand = best;
      cand.median_window = w;
      double s = score(cand);
      if (s > best_score) {
        best_score = s;
        best = cand;
      }
    }
    // (ii) centering
    {
      DimensionParams cand = best;
      cand.apply_center = true;
      double s = score(cand);
      if (s > best_score) {
        best_score = s;
        best = cand;
      }
    }
    // (iii) scaling
    {
      DimensionParams cand = best;
      cand.apply_scale = true;
      try {
        double s = score(cand);
        if (s > best_score) {
          best_score = s;
          best = cand;
        }
      } catch (const DegenerateScaleError &) {
      }
    }
    // (iv) time shift
    const DimensionParams before_shift = best;
    for (auto d : shifts) {
      if (d >= min_len)
        break;
      DimensionParams cand = before_shift;
      cand.shift_steps = d;
      double s = score(cand);
      if (s > best_score) {
        best_score = s;
        best = cand;
      }
    }
    best.dev_ccc_after = best_score;
    params.dims.push_back(best);
  }
  return params;
}

nlohmann::json PostProcessParams::to_json() const {
  nlohmann::json dims_json = nlohmann::json::array();
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const auto &d = dims[k];
    dims_json.push_back({{"label", k < label_names.size() ? label_names[k] : ""},
                         {"median_window", d.median_window},
                         {"apply_center", d.apply_center},
                         {"center_target_mean", d.center_target_mean},
                         {"apply_scale", d.apply_scale},
                         {"scale_target_std", d.scale_target_std},
                         {"shift_steps", d.shift_steps},
                         {"dev_ccc_before", d.dev_ccc_before},
                         {"dev_ccc_after", d.dev_ccc_after}});
  }
  return {{"format", "e2y-postprocess"},
          {"version", 1},
          {"dimensions", dims_json},
          {"grids", {{"median_windows", grids.median_windows}, {"shifts", grids.shifts}}}};
}

PostProcessParams PostProcessParams::from_json(const nlohmann::json &j) {
  PostProcessParams p;
  try {
    if (j.at("format").get<std::string>() != "e2y-postprocess")
      throw ValidationError("not a post-processing parameter file");
    for (const auto &d : j.at("dimensions")) {
      DimensionParams dp;
      p.label_names.push_back(d.at("label").get<std::string>());
      dp.median_window = d.at("median_window").get<std::size_t>();
      dp.apply_center = d.at("apply_center").get<bool>();
      dp.center_target_mean = d.at("center_target_mean").get<double>();
      dp.apply_scale = d.at("apply_scale").get<bool>();
      dp.scale_target_std = d.at("scale_target_std").get<double>();
      dp.shift_steps = d.at("shift_steps").get<std::size_t>();
      dp.dev_ccc_before = d.value("dev_ccc_before", 0.0);
      dp.dev_ccc_after = d.value("dev_ccc_after", 0.0);
      if (dp.median_window % 2 == 0)
        throw ValidationError("median_window must be odd");
      p.dims.push_back(dp);
    }
    if (j.contains("grids")) {
      p.grids.median_windows = j["grids"].value("median_windows", std::vector<std::size_t>{});
      p.grids.shifts = j["grids"].value("shifts", std::vector<std::size_t>{});
    }
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("malformed post-processing parameters: ") + e.what());
  }
  return p;
}

void PostProcessParams::save(const std::filesystem::path &path) const {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

PostProcessParams PostProcessParams::load(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

} // namespace e2y
