// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <e2y/audio_frontend.hpp>
#include <e2y/error.hpp>
#include <e2y/fully_connected.hpp>
#include <e2y/metrics.hpp>
#include <e2y/postprocess.hpp>
#include <e2y/provider.hpp>
#include <e2y/recurrent.hpp>
#include <e2y/visual_frontend.hpp>

#include <chrono>
#include <cstdio>
#include <set>
#include <sstream>

using namespace e2y;
using namespace e2y::testing;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
public:
  void require(bool ok, const std::string &what) {
    if (!ok && failures_++ < 5)
      notes_ << (notes_.tellp() > 0 ? "; " : "") << what;
  }
  void note(const std::string &s) { info_ << (info_.tellp() > 0 ? ", " : "") << s; }
  Outcome done() const {
    return {failures_ == 0, failures_ == 0 ? info_.str() : notes_.str()};
  }

private:
  std::size_t failures_ = 0;
  std::ostringstream notes_, info_;
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome ccc_oracle() {
  Check c;
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng() % 499;
    auto p = random_series(rng, n, -3, 3);
    auto g = random_series(rng, n, -2, 4);
    if (i % 3 == 0)
      for (std::size_t k = 0; k < n; ++k)
        p[k] = 0.7 * g[k] + 0.3 * p[k];
    worst = std::max(worst, std::abs(ccc(p, g) - brute_ccc(p, g)));
  }
  c.require(worst <= 1e-10, "max |ccc - oracle| = " + fmt("%.3g", worst));
  auto a = random_series(rng, 50);
  c.require(std::abs(ccc(a, a) - 1.0) <= 1e-12, "ccc(a,a) != 1");
  c.require(std::abs(ccc(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) + 1.0) <= 1e-12,
            "ccc([1,2,3],[3,2,1]) != -1");
  c.require(std::abs(ccc(std::vector<double>{0, 1, 2}, std::vector<double>{3, 4, 5}) - 4.0 / 31.0) <=
              1e-12,
            "ccc([0,1,2],[3,4,5]) != 4/31");
  c.note("max abs diff " + fmt("%.2e", worst) + " over 1000 series");
  return c.done();
}

double loss_gradient_error(LossPooling pooling, const StepMask &mask, std::mt19937_64 &rng) {
  const auto rows = static_cast<Eigen::Index>(mask.values.size());
  Matrix p = random_matrix(rng, rows, 2), g = random_matrix(rng, rows, 2);
  const auto r = ccc_loss(p, g, mask, pooling);
  const double h = 1e-6;
  double worst = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double saved = p.data()[i];
    p.data()[i] = saved + h;
    const double up = ccc_loss(p, g, mask, pooling).loss;
    p.data()[i] = saved - h;
    const double down = ccc_loss(p, g, mask, pooling).loss;
    p.data()[i] = saved;
    worst = std::max(worst, rel_err(r.grad.data()[i], (up - down) / (2 * h), 1e-7));
  }
  return worst;
}

void perturb(Block &block, std::mt19937_64 &rng, double amount) {
  std::uniform_real_distribution<double> d(-amount, amount);
  for (auto *p : block.parameters())
    for (Eigen::Index i = 0; i < p->value.size(); ++i)
      p->value.data()[i] += d(rng);
}

Outcome gradient_checks() {
  Check c;
  std::mt19937_64 gen(202);
  auto record = [&](const std::string &name, double err, std::size_t params) {
    c.require(err < 1e-4, name + " rel err " + fmt("%.3g", err));
    c.require(params <= 1000, name + " has " + std::to_string(params) + " parameters");
    c.note(name + " " + fmt("%.1e", err));
  };

  double loss_err = 0;
  for (auto pooling : {LossPooling::batch, LossPooling::per_sequence}) {
    loss_err = std::max(loss_err, loss_gradient_error(pooling, prefix_mask(9, {9, 5, 2}), gen));
    loss_err = std::max(loss_err, loss_gradient_error(pooling, StepMask::full(2, 7), gen));
  }
  record("ccc_loss", loss_err, 0);

  Rng rng(203);
  AudioFrontendSpec audio;
  audio.blocks = {{3, 4, 2}, {2, 3, 2}};
  auto a = make_audio_frontend("audio", audio, 12, rng);
  perturb(*a, gen, 0.1);
  record("audio", check_block_gradients(*a, {random_matrix(gen, 6, 12)}, prefix_mask(3, {3, 2}), gen, true).max_rel_error,
         parameter_count(*a));

  for (std::size_t depth : {18u, 50u}) {
    VisualFrontendSpec v;
    v.depth = depth;
    v.base_width = depth == 18 ? 2 : 1;
    v.num_stages = 2;
    const std::size_t channels = depth == 18 ? 1 : 3;
    auto block = make_visual_frontend("video", v, {32, 32, channels}, rng);
    perturb(*block, gen, 0.2);
    Matrix x = random_matrix(gen, 2, static_cast<Eigen::Index>(32 * 32 * channels), 0, 255);
    record("resnet" + std::to_string(depth),
           check_block_gradients(*block, {x}, prefix_mask(2, {2}), gen, false).max_rel_error,
           parameter_count(*block));
  }

  for (auto cell : {CellKind::gru, CellKind::lstm}) {
    for (std::size_t layers : {1u, 2u}) {
      auto block = make_recurrent("rnn", {cell, layers, 4}, 3, rng);
      perturb(*block, gen, 0.3);
      record(to_string(cell) + "x" + std::to_string(layers),
             check_block_gradients(*block, {random_matrix(gen, 10, 3)}, prefix_mask(5, {5, 3}), gen, true)
               .max_rel_error,
             parameter_count(*block));
    }
  }

  FullyConnectedSpec fc{{{8, Activation::relu}, {6, Activation::tanh}, {2, Activation::linear}}, true};
  auto f = make_fully_connected("fcn", fc, 5, rng);
  record("fcn", check_block_gradients(*f, {random_matrix(gen, 6, 5)}, prefix_mask(3, {3, 1}), gen, true).max_rel_error,
         parameter_count(*f));
  return c.done();
}

Outcome shape_law() {
  Check c;
  const AudioFrontendSpec spec;
  std::mt19937_64 rng(303);
  std::vector<std::size_t> lengths{640, 20};
  while (lengths.size() < 50)
    lengths.push_back(20 * (1 + rng() % 100));
  Rng init(304);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const std::size_t L = lengths[i];
    const std::size_t expected = 40 * L / 20;
    c.require(audio_feature_width(spec, L) == expected, "width mismatch at L=" + std::to_string(L));
    if (i < 6) {
      auto block = make_audio_frontend("audio", spec, L, init);
      Matrix x = random_matrix(rng, 2, static_cast<Eigen::Index>(L));
      Matrix y = block->forward(x, StepMask::full(1, 2));
      c.require(static_cast<std::size_t>(y.cols()) == expected,
                "runtime width mismatch at L=" + std::to_string(L));
    }
  }
  c.require(audio_feature_width(spec, 640) == 1280, "L=640 does not give 1280");
  for (std::size_t bad : {0u, 1u, 10u, 30u, 639u, 650u}) {
    bool rejected = false;
    try {
      audio_feature_width(spec, bad);
    } catch (const Error &) {
      rejected = true;
    }
    c.require(rejected, "L=" + std::to_string(bad) + " accepted");
  }
  c.note("50 lengths, 640 -> 1280");
  return c.done();
}

Outcome serialization() {
  Check c;
  std::mt19937_64 rng(404);
  std::size_t flips = 0;
  for (int i = 0; i < 200; ++i) {
    const bool audio = rng() % 2, video = rng() % 2, numeric = !audio && !video ? true : rng() % 2;
    auto r = random_record(rng, "subject_" + std::to_string(i), 1 + rng() % 12, audio, video, numeric,
                           1 + rng() % 3);
    const auto bytes = encode_record(r);
    const auto back = decode_record(bytes);
    c.require(back == r && encode_record(back) == bytes, "round trip differs for record " + std::to_string(i));
    if (i % 10 != 0)
      continue;
    for (std::size_t k = 0; k < bytes.size(); ++k) {
      for (std::uint8_t mask : {std::uint8_t{0x01}, std::uint8_t{0x80}, std::uint8_t{0xff}}) {
        auto copy = bytes;
        copy[k] ^= mask;
        bool detected = false;
        try {
          decode_record(copy);
        } catch (const IoError &) {
          detected = true;
        }
        ++flips;
        c.require(detected, "undetected corruption at byte " + std::to_string(k) + " of record " +
                              std::to_string(i));
      }
    }
  }
  c.note("200 round trips, " + std::to_string(flips) + " corruptions detected");
  return c.done();
}

Outcome provider_coverage() {
  Check c;
  std::mt19937_64 rng(505);
  std::size_t labelled = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<WindowView> windows;
    std::size_t total = 0;
    const std::size_t seq = 1 + rng() % 40;
    const bool audio = rng() % 2;
    for (int i = 0; i < 6; ++i) {
      const std::size_t n = 1 + rng() % 120;
      total += n;
      auto rec = std::make_shared<const SequenceRecord>(
        random_record(rng, "s" + std::to_string(i), n, audio, false, true));
      auto w = make_windows(rec, seq, seq);
      windows.insert(windows.end(), w.begin(), w.end());
    }
    std::size_t mask_sum = 0;
    std::set<std::pair<std::string, std::size_t>> seen;
    bool duplicate = false;
    for (const auto &b : batch_windows(windows, {seq, 1 + rng() % 8, rng(), 2})) {
      mask_sum += b.mask.count();
      for (std::size_t i = 0; i < b.batch_size; ++i)
        for (std::size_t t = 0; t < seq; ++t)
          if (b.mask.on(i * seq + t))
            duplicate |= !seen.insert({b.provenance[i].first, b.provenance[i].second + t}).second;
    }
    c.require(mask_sum == total, "mask sum " + std::to_string(mask_sum) + " != " + std::to_string(total));
    c.require(!duplicate && seen.size() == total, "step covered more than once or missed");
    labelled += total;
  }
  c.note("50 trials, " + std::to_string(labelled) + " steps");
  return c.done();
}

Outcome postprocessing() {
  Check c;
  std::mt19937_64 rng(606);
  double worst = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + rng() % 300;
    auto s = random_series(rng, n, -2, 2);
    const std::size_t w = 2 * (rng() % 12) + 1;
    const std::size_t d = rng() % n;
    const double mean = random_series(rng, 1)[0], sd = 0.1 + std::abs(random_series(rng, 1)[0]);
    c.require(median_filter(s, w) == brute_median(s, w), "median differs");
    c.require(time_shift(s, static_cast<long>(d)) == brute_shift(s, d), "shift differs");
    const auto ce = center(s, mean), ceo = brute_center(s, mean);
    const auto sc = scale(s, sd), sco = brute_scale(s, sd);
    for (std::size_t k = 0; k < n; ++k)
      worst = std::max({worst, std::abs(ce[k] - ceo[k]), std::abs(sc[k] - sco[k])});
  }
  c.require(worst <= 1e-12, "center/scale deviate by " + fmt("%.3g", worst));

  std::uniform_real_distribution<double> u(0, 1);
  std::size_t recovered = 0;
  for (int variant = 0; variant < 2; ++variant) {
    for (std::size_t d = 0; d <= 20; ++d) {
      std::vector<SessionSeries> dev;
      for (int s = 0; s < 2; ++s) {
        std::vector<double> base(400);
        if (variant == 0) {
          const double f1 = 0.01 + 0.03 * u(rng), f2 = 0.03 + 0.05 * u(rng);
          const double p1 = 6.28 * u(rng), p2 = 6.28 * u(rng);
          for (std::size_t k = 0; k < base.size(); ++k)
            base[k] = std::sin(f1 * static_cast<double>(k) + p1) + 0.5 * std::sin(f2 * static_cast<double>(k) + p2);
        } else {
          base = smooth_random(rng, 400);
        }
        std::vector<double> gold(base.size());
        for (std::size_t k = 0; k < base.size(); ++k)
          gold[k] = k >= d ? base[k - d] : base[0];
        dev.push_back(session_from("s" + std::to_string(s), base, gold));
      }
      FitGrids grids = FitGrids::defaults();
      if (variant == 1)
        grids.median_windows = {1};
      auto fitted = fit_postprocess(dev, {"x"}, gold_statistics(dev), grids);
      if (fitted.dims[0].shift_steps == d)
        ++recovered;
      else
        c.require(false, std::string(variant == 0 ? "smooth" : "ar1") + " delay " + std::to_string(d) +
                           " fitted as " + std::to_string(fitted.dims[0].shift_steps));
    }
  }

  std::size_t never_worse = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<SessionSeries> dev;
    for (int s = 0; s < 3; ++s) {
      const std::size_t n = 30 + rng() % 150;
      auto gold = smooth_random(rng, n);
      auto pred = random_series(rng, n);
      for (std::size_t k = 0; k < n; ++k)
        pred[k] = 0.4 * pred[k] + 0.5 * gold[k] + 0.3;
      dev.push_back(session_from("s" + std::to_string(s), pred, gold));
    }
    std::vector<TargetStats> targets{{0.05 * (i % 5), 0.5 + 0.1 * (i % 7)}};
    FitGrids grids{{1, 3, 5, 9, 15}, {0, 1, 2, 4, 8, 16}};
    auto fitted = fit_postprocess(dev, {"x"}, targets, grids);
    const double identity = evaluate_sessions(dev, {"x"}).ccc[0];
    const double after = evaluate_sessions(apply_postprocess(fitted, dev), {"x"}).ccc[0];
    if (after >= identity)
      ++never_worse;
    else
      c.require(false, "fit lowered dev CCC from " + fmt("%.6f", identity) + " to " + fmt("%.6f", after));
  }
  c.note("500 series max dev " + fmt("%.1e", worst));
  c.note(std::to_string(recovered) + "/42 delays recovered");
  c.note(std::to_string(never_worse) + "/100 fits not worse");
  return c.done();
}

RunConfig overfit_config() {
  RunConfig c = RunConfig::from_json({{"model", gru_graph(64)}});
  c.provider.seq_len = 50;
  c.provider.hop = 25;
  c.provider.batch_size = 8;
  c.optimizer.learning_rate = 3e-3;
  c.schedule.max_steps = 2000;
  c.schedule.eval_every = 100;
  c.schedule.checkpoint_every = 0;
  c.postprocess.fit = false;
  c.seed = 7;
  return c;
}

TrainResult overfit_run() {
  auto task = smooth_task(1, 20, 4, 300);
  return train(overfit_config(), share_records(task.train), share_records(task.dev));
}

std::optional<TrainResult> first_overfit;

Outcome synthetic_overfit() {
  Check c;
  first_overfit = overfit_run();
  const auto &r = *first_overfit;
  std::optional<std::size_t> reached;
  double best = -1;
  for (const auto &e : r.evaluations) {
    best = std::max(best, e.report.ccc[0]);
    if (!reached && e.report.ccc[0] > 0.9)
      reached = e.step;
  }
  c.require(r.steps <= 2000, "ran more than 2000 steps");
  c.require(reached.has_value(), "dev CCC never exceeded 0.9 (best " + fmt("%.4f", best) + ")");
  if (reached)
    c.note("dev CCC > 0.9 at step " + std::to_string(*reached));
  c.note("best " + fmt("%.4f", best));
  if (r.final_dev)
    c.note("final " + fmt("%.4f", r.final_dev->ccc[0]));
  return c.done();
}

SequenceRecord trimodal_subject(std::mt19937_64 &rng, const std::string &id, std::size_t steps) {
  SequenceRecord r;
  r.subject_id = id;
  r.step_period = 0.04;
  r.num_steps = steps;
  r.label_names = {"arousal", "valence"};
  std::uniform_real_distribution<double> u(-1, 1);
  const double f1 = 0.05 + 0.1 * std::abs(u(rng)), f2 = 0.02 + 0.05 * std::abs(u(rng));
  std::vector<float> audio(steps * 100), physio(steps * 2);
  std::vector<std::uint8_t> video(steps * 32 * 32 * 3);
  double a_ema = 0, v_ema = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const double x = std::sin(f1 * static_cast<double>(t)), y = std::cos(f2 * static_cast<double>(t));
    physio[2 * t] = static_cast<float>(x);
    physio[2 * t + 1] = static_cast<float>(y + 0.1 * u(rng));
    const double amp = 0.5 + 0.4 * y;
    for (std::size_t k = 0; k < 100; ++k)
      audio[t * 100 + k] = static_cast<float>(amp * std::sin(0.3 * static_cast<double>(k)) + 0.05 * u(rng));
    const auto level = static_cast<std::uint8_t>(127.5 + 100.0 * x);
    for (std::size_t k = 0; k < 32 * 32 * 3; ++k)
      video[t * 32 * 32 * 3 + k] = static_cast<std::uint8_t>(std::clamp(level + static_cast<int>(20 * u(rng)), 0, 255));
    a_ema = 0.8 * a_ema + 0.2 * std::tanh(2 * x);
    v_ema = 0.8 * v_ema + 0.2 * y;
    r.labels.push_back(a_ema);
    r.labels.push_back(v_ema);
  }
  add_float_modality(r, {"audio", ModalityKind::audio, 2500.0, {100}, DType::float32}, audio);
  add_byte_modality(r, {"video", ModalityKind::video, 25.0, {32, 32, 3}, DType::uint8}, video);
  add_float_modality(r, {"physio", ModalityKind::numeric, 25.0, {1, 2}, DType::float32}, physio);
  return r;
}

json fusion_graph() {
  return json::parse(R"({
    "nodes": [
      {"id": "audio", "kind": "input", "modality": "audio"},
      {"id": "video", "kind": "input", "modality": "video"},
      {"id": "physio", "kind": "input", "modality": "physio"},
      {"id": "conv", "kind": "audio_frontend", "inputs": ["audio"]},
      {"id": "resnet", "kind": "visual_frontend", "inputs": ["video"], "depth": 18,
       "base_width": 4, "num_stages": 2},
      {"id": "fuse", "kind": "concat", "inputs": ["conv", "resnet", "physio"]},
      {"id": "fcn", "kind": "fully_connected", "inputs": ["fuse"], "widths": [256]},
      {"id": "rnn", "kind": "recurrent", "inputs": ["fcn"], "cell": "gru",
       "num_layers": 2, "hidden_units": 64},
      {"id": "head", "kind": "fully_connected", "inputs": ["rnn"], "widths": [2], "head": true}
    ],
    "output": "head"})");
}

Outcome multimodal_composition() {
  Check c;
  std::mt19937_64 rng(808);
  std::vector<SequenceRecord> recs;
  for (int i = 0; i < 4; ++i)
    recs.push_back(trimodal_subject(rng, "s" + std::to_string(i), 40));
  auto set = share_records(recs);
  RunConfig cfg = RunConfig::from_json({{"model", fusion_graph()}});
  cfg.provider.seq_len = 40;
  cfg.provider.hop = 40;
  cfg.provider.batch_size = 4;
  cfg.provider.shuffle = false;
  cfg.optimizer.learning_rate = 1e-3;
  cfg.schedule.eval_every = 0;
  cfg.schedule.checkpoint_every = 0;
  cfg.postprocess.fit = false;
  cfg.seed = 9;

  auto validation = validate_graph(cfg.model, set[0]->modalities, 2);
  c.require(validation.ok(), "graph invalid");
  if (!validation.ok())
    return c.done();
  Model model(*validation.plan, 1);
  std::size_t params = 0;
  for (auto *p : model.parameters())
    params += p->size();
  c.note(std::to_string(params) + " parameters");

  cfg.schedule.max_steps = 1;
  auto one = train(cfg, set, {});
  c.require(one.losses.size() == 1 && std::isfinite(one.losses[0]), "first step not finite");
  for (const auto &t : one.checkpoint.parameters)
    c.require(t.value.allFinite(), "non-finite parameter " + t.name);

  cfg.schedule.max_steps = 51;
  auto run = train(cfg, set, {});
  c.require(run.losses.size() == 51, "expected 51 steps");
  bool finite = true;
  for (double l : run.losses)
    finite &= std::isfinite(l);
  c.require(finite, "non-finite loss");
  const double before = run.losses.front(), after = run.losses.back();
  c.require(after < before, "loss did not improve: " + fmt("%.5f", before) + " -> " + fmt("%.5f", after));
  c.note("loss " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + " after 50 steps");
  return c.done();
}

Outcome determinism() {
  Check c;
  if (!first_overfit)
    first_overfit = overfit_run();
  const auto second = overfit_run();
  c.require(first_overfit->losses == second.losses, "loss curves differ");
  bool evals_equal = first_overfit->evaluations.size() == second.evaluations.size();
  for (std::size_t i = 0; evals_equal && i < second.evaluations.size(); ++i)
    evals_equal = first_overfit->evaluations[i].report.ccc == second.evaluations[i].report.ccc;
  c.require(evals_equal, "dev evaluations differ");
  c.note(std::to_string(second.losses.size()) + " identical losses");
  return c.done();
}

} // namespace

int main() {
  struct Criterion {
    int id;
    const char *name;
    double limit_seconds;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
    {1, "ccc oracle equivalence", 5, ccc_oracle},
    {2, "gradient checks", 120, gradient_checks},
    {3, "audio shape law", 10, shape_law},
    {4, "record serialization", 30, serialization},
    {5, "provider coverage", 10, provider_coverage},
    {6, "post-processing oracles", 60, postprocessing},
    {7, "synthetic overfit", 600, synthetic_overfit},
    {8, "multimodal composition", 300, multimodal_composition},
    {9, "determinism", 600, determinism},
  };
  int failed = 0;
  for (const auto &cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (o.pass && secs > cr.limit_seconds) {
      o.pass = false;
      o.detail += "; exceeded " + fmt("%.0f", cr.limit_seconds) + " s";
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria));
  return failed == 0 ? 0 : 1;
}
