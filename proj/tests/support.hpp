// SPDX-License-Identifier: Apache-2.0
/**
 * @file   support.hpp
 * @brief  Synthetic data builders and reference oracles shared by the test
 *         suites and the acceptance runner.
 */
#pragma once

#include <e2y/blocks.hpp>
#include <e2y/config.hpp>
#include <e2y/engine.hpp>
#include <e2y/metrics.hpp>
#include <e2y/record.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace e2y::testing {

/// Unique scratch directory removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("e2y-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &s) const { return path_ / s; }

private:
  std::filesystem::path path_;
};

// Direct-formula CCC with population moments, written independently of the
// library: 2*cov / (var_p + var_g + (mean_p - mean_g)^2).
inline double brute_ccc(const std::vector<double> &p, const std::vector<double> &g) {
  const double n = static_cast<double>(p.size());
  long double mp = 0, mg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mg += g[i];
  }
  mp /= n;
  mg /= n;
  long double vp = 0, vg = 0, cov = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    vp += (p[i] - mp) * (p[i] - mp);
    vg += (g[i] - mg) * (g[i] - mg);
    cov += (p[i] - mp) * (g[i] - mg);
  }
  vp /= n;
  vg /= n;
  cov /= n;
  const long double den = vp + vg + (mp - mg) * (mp - mg);
  if (den == 0)
    return 1.0;
  return static_cast<double>(2 * cov / den);
}

inline std::vector<double> random_series(std::mt19937_64 &rng, std::size_t n, double lo = -1,
                                         double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> out(n);
  for (auto &v : out)
    v = d(rng);
  return out;
}

inline Matrix random_matrix(std::mt19937_64 &rng, Eigen::Index r, Eigen::Index c,
                            double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = d(rng);
  return m;
}

/// Max relative error between analytic and central-difference gradients of
/// sum(forward(x) .* weights) w.r.t. every parameter and, when requested,
/// every input entry. Relative error uses max(|a|, |n|, floor).
struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline GradCheck check_block_gradients(Block &block, std::vector<Matrix> inputs,
                                       const StepMask &mask, std::mt19937_64 &rng,
                                       bool check_inputs, double h = 1e-5) {
  std::vector<const Matrix *> ptrs;
  for (auto &m : inputs)
    ptrs.push_back(&m);
  const Matrix out0 = block.forward(ptrs, mask);
  Matrix weights = random_matrix(rng, out0.rows(), out0.cols());
  auto objective = [&]() {
    Matrix out = block.forward(ptrs, mask);
    zero_masked_rows(out, mask);
    return (out.array() * weights.array()).sum();
  };
  for (auto *p : block.parameters())
    p->zero_grad();
  block.forward(ptrs, mask);
  Matrix w_masked = weights;
  zero_masked_rows(w_masked, mask);
  const auto input_grads = block.backward(w_masked);

  GradCheck result;
  for (auto *p : block.parameters()) {
    const Matrix analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double up = objective();
      p->value.data()[i] = saved - h;
      const double down = objective();
      p->value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_err(analytic.data()[i], numeric));
      ++result.checked;
    }
  }
  if (check_inputs) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (input_grads[k].size() == 0)
        continue;
      for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
        const double saved = inputs[k].data()[i];
        inputs[k].data()[i] = saved + h;
        const double up = objective();
        inputs[k].data()[i] = saved - h;
        const double down = objective();
        inputs[k].data()[i] = saved;
        const double numeric = (up - down) / (2 * h);
        result.max_rel_error =
          std::max(result.max_rel_error, rel_err(input_grads[k].data()[i], numeric));
        ++result.checked;
      }
    }
  }
  return result;
}

inline std::size_t parameter_count(Block &block) {
  std::size_t n = 0;
  for (auto *p : block.parameters())
    n += p->size();
  return n;
}

/// Prefix mask with the given per-sequence lengths.
inline StepMask prefix_mask(std::size_t seq, const std::vector<std::size_t> &lengths) {
  StepMask m{lengths.size(), seq, std::vector<std::uint8_t>(lengths.size() * seq, 0)};
  for (std::size_t b = 0; b < lengths.size(); ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t)
      m.values[b * seq + t] = 1;
  return m;
}

/// Record with one numeric modality `physio` of `channels` values per step
/// and labels from `label_fn(step, dim)`.
inline SequenceRecord numeric_record(const std::string &id, std::size_t steps,
                                     const std::vector<float> &values, std::size_t channels,
                                     const std::vector<std::string> &label_names,
                                     const std::vector<double> &labels,
                                     double step_period = 0.04) {
  SequenceRecord r;
  r.subject_id = id;
  r.step_period = step_period;
  r.num_steps = steps;
  r.label_names = label_names;
  r.labels = labels;
  ModalityDescriptor d;
  d.name = "physio";
  d.kind = ModalityKind::numeric;
  d.sample_rate = 1.0 / step_period;
  d.frame_shape = {1, channels};
  d.dtype = DType::float32;
  add_float_modality(r, d, values);
  return r;
}

/// Random record with audio (float32), video (uint8) and numeric modalities
/// chosen by the flags; used for serialization and provider properties.
inline SequenceRecord random_record(std::mt19937_64 &rng, const std::string &id,
                                    std::size_t steps, bool audio, bool video, bool numeric,
                                    std::size_t label_dim = 2) {
  SequenceRecord r;
  r.subject_id = id;
  r.step_period = 0.04;
  r.num_steps = steps;
  std::uniform_real_distribution<float> uf(-1.0f, 1.0f);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  std::uniform_int_distribution<int> ub(0, 255);
  for (std::size_t k = 0; k < label_dim; ++k)
    r.label_names.push_back("dim" + std::to_string(k));
  r.labels.resize(steps * label_dim);
  for (auto &v : r.labels)
    v = ud(rng);
  if (audio) {
    ModalityDescriptor d{"audio", ModalityKind::audio, 400.0, {16}, DType::float32};
    std::vector<float> v(steps * 16);
    for (auto &x : v)
      x = uf(rng);
    add_float_modality(r, d, v);
  }
  if (video) {
    ModalityDescriptor d{"video", ModalityKind::video, 25.0, {4, 3, 3}, DType::uint8};
    std::vector<std::uint8_t> v(steps * 36);
    for (auto &x : v)
      x = static_cast<std::uint8_t>(ub(rng));
    add_byte_modality(r, d, v);
  }
  if (numeric) {
    ModalityDescriptor d{"physio", ModalityKind::numeric, 25.0, {1, 2}, DType::float32};
    std::vector<float> v(steps * 2);
    for (auto &x : v)
      x = uf(rng);
    add_float_modality(r, d, v);
  }
  return r;
}

/// Learnable 1-D task: input is a sum of slow sinusoids, gold is an
/// exponential moving average of tanh(2 x).
struct SmoothTask {
  std::vector<SequenceRecord> train;
  std::vector<SequenceRecord> dev;
};

inline SequenceRecord smooth_subject(std::mt19937_64 &rng, const std::string &id,
                                     std::size_t steps) {
  std::uniform_real_distribution<double> phase(0.0, 2 * M_PI);
  std::uniform_real_distribution<double> freq(0.01, 0.05);
  std::uniform_real_distribution<double> amp(0.3, 0.8);
  const double p1 = phase(rng), p2 = phase(rng), f1 = freq(rng), f2 = freq(rng);
  const double a1 = amp(rng), a2 = amp(rng);
  std::vector<float> x(steps);
  std::vector<double> gold(steps);
  double ema = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double v = a1 * std::sin(2 * M_PI * f1 * static_cast<double>(t) + p1) +
                     a2 * std::sin(2 * M_PI * f2 * static_cast<double>(t) + p2);
    x[t] = static_cast<float>(v);
    const double target = std::tanh(2.0 * v);
    ema = t == 0 ? target : 0.8 * ema + 0.2 * target;
    gold[t] = ema;
  }
  return numeric_record(id, steps, x, 1, {"arousal"}, gold);
}

inline SmoothTask smooth_task(std::uint64_t seed, std::size_t train_subjects,
                              std::size_t dev_subjects, std::size_t steps) {
  std::mt19937_64 rng(seed);
  SmoothTask task;
  for (std::size_t i = 0; i < train_subjects; ++i)
    task.train.push_back(smooth_subject(rng, "train_" + std::to_string(i), steps));
  for (std::size_t i = 0; i < dev_subjects; ++i)
    task.dev.push_back(smooth_subject(rng, "dev_" + std::to_string(i), steps));
  return task;
}

/// physio -> GRU-64 -> linear head.
inline nlohmann::json gru_graph(std::size_t hidden = 64, std::size_t label_dim = 1) {
  return nlohmann::json::parse(R"({
    "nodes": [
      {"id": "physio", "kind": "input", "modality": "physio"},
      {"id": "rnn", "kind": "recurrent", "inputs": ["physio"], "cell": "gru",
       "num_layers": 1, "hidden_units": )" + std::to_string(hidden) + R"(},
      {"id": "head", "kind": "fully_connected", "inputs": ["rnn"],
       "widths": [)" + std::to_string(label_dim) + R"(], "head": true}
    ],
    "output": "head"})");
}

inline std::vector<double> brute_median(const std::vector<double> &s, std::size_t w) {
  const long n = static_cast<long>(s.size()), half = static_cast<long>(w / 2);
  std::vector<double> out;
  for (long i = 0; i < n; ++i) {
    std::vector<double> win;
    for (long k = i - half; k <= i + half; ++k)
      win.push_back(s[static_cast<std::size_t>(std::clamp(k, 0L, n - 1))]);
    std::sort(win.begin(), win.end());
    out.push_back(win[win.size() / 2]);
  }
  return out;
}

inline std::vector<double> brute_center(const std::vector<double> &s, double target) {
  long double sum = 0;
  for (double v : s)
    sum += v;
  const long double m = sum / static_cast<long double>(s.size());
  std::vector<double> out;
  for (double v : s)
    out.push_back(static_cast<double>(v - m + target));
  return out;
}

inline std::vector<double> brute_scale(const std::vector<double> &s, double target) {
  long double sum = 0, sq = 0;
  for (double v : s)
    sum += v;
  const long double n = static_cast<long double>(s.size()), m = sum / n;
  for (double v : s)
    sq += (v - m) * (v - m);
  const long double sd = std::sqrt(sq / n);
  std::vector<double> out;
  for (double v : s)
    out.push_back(static_cast<double>(m + (v - m) * target / sd));
  return out;
}

inline std::vector<double> brute_shift(const std::vector<double> &s, std::size_t d) {
  std::vector<double> out(d, s.front());
  out.insert(out.end(), s.begin(), s.end() - static_cast<long>(d));
  return out;
}

inline SessionSeries session_from(const std::string &id, const std::vector<double> &pred,
                                  const std::vector<double> &gold) {
  SessionSeries s{id, Matrix(static_cast<Eigen::Index>(pred.size()), 1),
                  Matrix(static_cast<Eigen::Index>(gold.size()), 1)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.pred(static_cast<Eigen::Index>(i), 0) = pred[i];
    s.gold(static_cast<Eigen::Index>(i), 0) = gold[i];
  }
  return s;
}

/// AR(1)-smoothed uniform noise.
inline std::vector<double> smooth_random(std::mt19937_64 &rng, std::size_t n) {
  auto raw = random_series(rng, n);
  std::vector<double> out(n);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i)
    out[i] = acc = 0.9 * acc + raw[i];
  return out;
}

} // namespace e2y::testing
