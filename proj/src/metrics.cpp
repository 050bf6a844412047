// SPDX-License-Identifier: Apache-2.0
#include <e2y/error.hpp>
#include <e2y/metrics.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace e2y {

namespace {

struct Moments {
  double mean_p = 0, mean_g = 0, var_p = 0, var_g = 0, cov = 0;
  std::size_t n = 0;
};

template <typename Pick>
Moments moments(std::span<const double> p, std::span<const double> g, Pick use) {
  Moments m;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (use(i)) {
      m.mean_p += p[i];
      m.mean_g += g[i];
      ++m.n;
    }
  if (m.n == 0)
    return m;
  m.mean_p /= static_cast<double>(m.n);
  m.mean_g /= static_cast<double>(m.n);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (use(i)) {
      double dp = p[i] - m.mean_p, dg = g[i] - m.mean_g;
      m.var_p += dp * dp;
      m.var_g += dg * dg;
      m.cov += dp * dg;
    }
  m.var_p /= static_cast<double>(m.n);
  m.var_g /= static_cast<double>(m.n);
  m.cov /= static_cast<double>(m.n);
  return m;
}

double from_moments(const Moments &m) {
  if (m.n < 2)
    throw MetricError("CCC needs at least 2 valid steps, got " + std::to_string(m.n));
  const double diff = m.mean_p - m.mean_g;
  const double den = m.var_p + m.var_g + diff * diff;
  if (den == 0.0)
    return 1.0;
  return std::clamp(2.0 * m.cov / den, -1.0, 1.0);
}

void check_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x))
      throw MetricError("CCC input contains a non-finite value");
}

// Adds scale * d(CCC)/d(p_i) for each used i into grad (indexed like p).
template <typename Pick, typename Out>
double ccc_grad_into(std::span<const double> p, std::span<const double> g, Pick use,
                     double scale, Out out) {
  Moments m = moments(p, g, use);
  double value = from_moments(m);
  const double diff = m.mean_p - m.mean_g;
  const double den = m.var_p + m.var_g + diff * diff;
  if (den == 0.0)
    return value;
  const double num = 2.0 * m.cov;
  const double n = static_cast<double>(m.n);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (use(i)) {
      double dnum = 2.0 * (g[i] - m.mean_g) / n;
      double dden = 2.0 * (p[i] - m.mean_p) / n + 2.0 * diff / n;
      out(i, scale * (dnum * den - num * dden) / (den * den));
    }
  return value;
}

} // namespace

double ccc(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size())
    throw MetricError("CCC inputs differ in length");
  check_finite(pred);
  check_finite(gold);
  return from_moments(moments(pred, gold, [](std::size_t) { return true; }));
}

double ccc(std::span<const double> pred, std::span<const double> gold,
           std::span<const std::uint8_t> mask) {
  if (pred.size() != gold.size() || pred.size() != mask.size())
    throw MetricError("CCC inputs differ in length");
  check_finite(pred);
  check_finite(gold);
  return from_moments(moments(pred, gold, [&](std::size_t i) { return mask[i] != 0; }));
}

double ccc_with_gradient(std::span<const double> pred, std::span<const double> gold,
                         std::span<double> grad_pred) {
  if (pred.size() != gold.size() || grad_pred.size() != pred.size())
    throw MetricError("CCC inputs differ in length");
  std::fill(grad_pred.begin(), grad_pred.end(), 0.0);
  return ccc_grad_into(
    pred, gold, [](std::size_t) { return true; }, 1.0,
    [&](std::size_t i, double v) { grad_pred[i] += v; });
}

LossPooling loss_pooling_from_string(const std::string &s) {
  if (s == "batch")
    return LossPooling::batch;
  if (s == "per_sequence")
    return LossPooling::per_sequence;
  throw ValidationError("loss.pooling must be 'batch' or 'per_sequence', got '" + s + "'");
}

std::string to_string(LossPooling p) {
  return p == LossPooling::batch ? "batch" : "per_sequence";
}

LossResult ccc_loss(const Matrix &pred, const Matrix &gold, const StepMask &mask,
                    LossPooling pooling) {
  if (pred.rows() != gold.rows() || pred.cols() != gold.cols() ||
      static_cast<std::size_t>(pred.rows()) != mask.rows())
    throw ShapeError("ccc_loss: prediction, gold and mask shapes differ");
  const auto K = static_cast<std::size_t>(pred.cols());
  const auto rows = static_cast<std::size_t>(pred.rows());
  LossResult r;
  r.grad = Matrix::Zero(pred.rows(), pred.cols());
  r.per_dim.assign(K, 0.0);
  std::vector<double> p(rows), g(rows);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < rows; ++i) {
      p[i] = pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      g[i] = gold(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
    auto sink = [&](std::size_t base) {
      return [&, base](std::size_t i, double v) {
        r.grad(static_cast<Eigen::Index>(base + i), static_cast<Eigen::Index>(k)) += v;
      };
    };
    if (pooling == LossPooling::batch) {
      // d(loss)/d(pred) = -(1/K) d(CCC_k)/d(pred)
      r.per_dim[k] = ccc_grad_into(
        p, g, [&](std::size_t i) { return mask.on(i); }, -1.0 / static_cast<double>(K),
        sink(0));
    } else {
      std::vector<std::size_t> usable;
      for (std::size_t b = 0; b < mask.batch; ++b) {
        std::size_t n = 0;
        for (std::size_t t = 0; t < mask.seq; ++t)
          n += mask.on(b * mask.seq + t);
        if (n >= 2)
          usable.push_back(b);
      }
      if (usable.empty())
        throw MetricError("per-sequence CCC needs a sequence with at least 2 valid steps");
      const double share = 1.0 / static_cast<double>(usable.size());
      double acc = 0.0;
      for (auto b : usable) {
        const std::size_t base = b * mask.seq;
        std::span<const double> ps(p.data() + base, mask.seq), gs(g.data() + base, mask.seq);
        acc += ccc_grad_into(
          ps, gs, [&](std::size_t t) { return mask.on(base + t); },
          -share / static_cast<double>(K), sink(base));
      }
      r.per_dim[k] = acc * share;
    }
    r.loss += 1.0 - r.per_dim[k];
  }
  r.loss /= static_cast<double>(K);
  return r;
}

LossResult cross_entropy_loss(const Matrix &pred, const Matrix &gold, const StepMask &mask) {
  if (pred.rows() != gold.rows() || pred.cols() != gold.cols() ||
      static_cast<std::size_t>(pred.rows()) != mask.rows())
    throw ShapeError("cross_entropy_loss: prediction, gold and mask shapes differ");
  const std::size_t n = mask.count();
  if (n == 0)
    throw MetricError("cross-entropy needs at least one valid step");
  LossResult r;
  r.grad = Matrix::Zero(pred.rows(), pred.cols());
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (!mask.on(static_cast<std::size_t>(i)))
      continue;
    RowVector z = pred.row(i).array() - pred.row(i).maxCoeff();
    RowVector e = z.array().exp();
    double sum = e.sum();
    RowVector prob = e / sum;
    double log_sum = std::log(sum);
    for (Eigen::Index k = 0; k < pred.cols(); ++k)
      r.loss -= gold(i, k) * (z(k) - log_sum);
    r.grad.row(i) = (prob * gold.row(i).sum() - gold.row(i)) / static_cast<double>(n);
  }
  r.loss /= static_cast<double>(n);
  return r;
}

SessionPooling session_pooling_from_string(const std::string &s) {
  if (s == "concatenate")
    return SessionPooling::concatenate;
  if (s == "per_subject")
    return SessionPooling::per_subject;
  throw ValidationError("evaluation.pooling must be 'concatenate' or 'per_subject', got '" +
                        s + "'");
}

std::string to_string(SessionPooling p) {
  return p == SessionPooling::concatenate ? "concatenate" : "per_subject";
}

std::vector<double> concat_column(std::span<const SessionSeries> sessions, std::size_t dim,
                                  bool gold) {
  std::vector<double> out;
  for (const auto &s : sessions) {
    const Matrix &m = gold ? s.gold : s.pred;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      out.push_back(m(i, static_cast<Eigen::Index>(dim)));
  }
  return out;
}

ScoreReport evaluate_sessions(std::span<const SessionSeries> sessions,
                              const std::vector<std::string> &label_names,
                              SessionPooling pooling) {
  if (sessions.empty())
    throw MetricError("no sessions to evaluate");
  const std::size_t K = label_names.size();
  ScoreReport report;
  report.label_names = label_names;
  report.pooling = pooling;
  report.subjects = sessions.size();
  for (const auto &s : sessions) {
    if (s.pred.rows() != s.gold.rows() || s.pred.cols() != s.gold.cols())
      throw MetricError("subject '" + s.subject_id + "': prediction and gold lengths differ");
    if (static_cast<std::size_t>(s.gold.cols()) != K)
      throw MetricError("subject '" + s.subject_id + "': label dimension mismatch");
    report.steps += static_cast<std::size_t>(s.gold.rows());
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (pooling == SessionPooling::concatenate) {
      report.ccc.push_back(
        ccc(concat_column(sessions, k, false), concat_column(sessions, k, true)));
    } else {
      double acc = 0.0;
      for (const auto &s : sessions) {
        std::span<const SessionSeries> one(&s, 1);
        acc += ccc(concat_column(one, k, false), concat_column(one, k, true));
      }
      report.ccc.push_back(acc / static_cast<double>(sessions.size()));
    }
  }
  double sum = 0.0;
  for (double c : report.ccc)
    sum += c;
  report.mean = K ? sum / static_cast<double>(K) : 0.0;
  return report;
}

namespace {
double round6(double v) { return std::round(v * 1e6) / 1e6; }
} // namespace

nlohmann::json ScoreReport::to_json() const {
  nlohmann::json dims = nlohmann::json::object();
  for (std::size_t k = 0; k < label_names.size(); ++k)
    dims[label_names[k]] = round6(ccc[k]);
  return {{"ccc", dims},
          {"mean_ccc", round6(mean)},
          {"steps", steps},
          {"subjects", subjects},
          {"pooling", to_string(pooling)},
          {"postprocessed", postprocessed}};
}

std::string ScoreReport::table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %10s\n", "dimension", "CCC");
  os << line;
  for (std::size_t k = 0; k < label_names.size(); ++k) {
    std::snprintf(line, sizeof line, "%-16s %10.6f\n", label_names[k].c_str(), ccc[k]);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-16s %10.6f\n", "mean", mean);
  os << line;
  os << "steps: " << steps << ", subjects: " << subjects << ", pooling: " << to_string(pooling)
     << (postprocessed ? ", post-processing applied" : "") << "\n";
  return os.str();
}

} // namespace e2y
