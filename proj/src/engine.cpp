// SPDX-License-Identifier: Apache-2.0
#include <e2y/engine.hpp>
#include <e2y/error.hpp>
#include <e2y/provider.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace e2y {

namespace fs = std::filesystem;

RecordSet load_record_set(const fs::path &path) {
  if (path.empty())
    throw ValidationError("record path is empty");
  if (!fs::exists(path))
    throw ValidationError("record path does not exist: " + path.string());
  auto records = read_records(path);
  if (records.empty())
    throw ValidationError("no records found in " + path.string());
  return share_records(std::move(records));
}

RecordSet share_records(std::vector<SequenceRecord> records) {
  RecordSet out;
  for (auto &r : records)
    out.push_back(std::make_shared<const SequenceRecord>(std::move(r)));
  return out;
}

namespace {

void check_schema(const RecordSet &records, const SequenceRecord &reference,
                  const std::string &what) {
  for (const auto &r : records) {
    if (r->modalities != reference.modalities)
      throw ValidationError(what + " record '" + r->subject_id +
                            "' has different modalities than '" + reference.subject_id + "'");
    if (r->label_names != reference.label_names)
      throw ValidationError(what + " record '" + r->subject_id +
                            "' has different label names than '" + reference.subject_id + "'");
  }
}

OptimizerSettings optimizer_settings(const RunConfig &c) {
  OptimizerSettings s;
  s.kind = c.optimizer.kind;
  s.learning_rate = c.optimizer.learning_rate;
  s.clip_norm = c.optimizer.clip_norm;
  s.beta1 = c.optimizer.beta1;
  s.beta2 = c.optimizer.beta2;
  s.epsilon = c.optimizer.epsilon;
  s.momentum = c.optimizer.momentum;
  return s;
}

std::vector<SessionSeries> gold_sessions(const RecordSet &records) {
  std::vector<SessionSeries> out;
  for (const auto &r : records) {
    SessionSeries s;
    s.subject_id = r->subject_id;
    s.gold = Eigen::Map<const Matrix>(r->labels.data(), static_cast<Eigen::Index>(r->num_steps),
                                      static_cast<Eigen::Index>(r->label_dim()));
    s.pred = Matrix::Zero(s.gold.rows(), s.gold.cols());
    out.push_back(std::move(s));
  }
  return out;
}

class MetricsLog {
public:
  explicit MetricsLog(const fs::path &path) {
    if (path.empty())
      return;
    out_.open(path, std::ios::trunc);
    if (!out_)
      throw IoError("cannot write " + path.string());
    out_ << "step,split,metric,dimension,value\n";
    out_ << std::setprecision(17);
  }
  void row(std::size_t step, const char *split, const char *metric, const std::string &dim,
           double value) {
    if (!out_.is_open())
      return;
    out_ << step << ',' << split << ',' << metric << ',' << dim << ',' << value << '\n';
    out_.flush();
  }

private:
  std::ofstream out_;
};

void write_json(const fs::path &path, const nlohmann::json &j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

} // namespace

std::vector<NamedTensor> capture_parameters(Model &model) {
  std::vector<NamedTensor> out;
  for (auto *p : model.parameters())
    out.push_back({p->name, p->shape, p->value});
  return out;
}

void restore_parameters(Model &model, const std::vector<NamedTensor> &tensors) {
  std::map<std::string, const NamedTensor *> by_name;
  for (const auto &t : tensors)
    by_name[t.name] = &t;
  const auto params = model.parameters();
  if (params.size() != tensors.size())
    throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, model has " + std::to_string(params.size()));
  for (auto *p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end())
      throw ValidationError("checkpoint has no tensor '" + p->name + "'");
    if (it->second->shape != p->shape || it->second->value.size() != p->value.size())
      throw ValidationError("checkpoint tensor '" + p->name + "' has a different shape");
    std::memcpy(p->value.data(), it->second->value.data(),
                static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
}

std::vector<SessionSeries> predict_sessions(Model &model, const RecordSet &records,
                                            std::size_t seq_len, std::size_t batch_size) {
  if (seq_len < 1 || batch_size < 1)
    throw ParameterError("seq_len and batch_size must be >= 1");
  std::vector<SessionSeries> sessions = gold_sessions(records);
  std::vector<std::vector<std::uint8_t>> covered;
  std::vector<WindowView> windows;
  std::vector<std::size_t> owner;
  for (std::size_t r = 0; r < records.size(); ++r) {
    covered.emplace_back(records[r]->num_steps, 0);
    for (auto &w : make_windows(records[r], seq_len, seq_len)) {
      windows.push_back(std::move(w));
      owner.push_back(r);
    }
  }
  for (std::size_t first = 0; first < windows.size(); first += batch_size) {
    const std::size_t n = std::min(batch_size, windows.size() - first);
    std::span<const WindowView> group(windows.data() + first, n);
    const Batch batch = assemble_batch(group, seq_len);
    const Matrix pred = model.forward(batch);
    for (std::size_t b = 0; b < n; ++b) {
      const auto &w = windows[first + b];
      auto &session = sessions[owner[first + b]];
      auto &cov = covered[owner[first + b]];
      for (std::size_t t = 0; t < w.length; ++t) {
        session.pred.row(static_cast<Eigen::Index>(w.start + t)) =
          pred.row(static_cast<Eigen::Index>(b * seq_len + t));
        ++cov[w.start + t];
      }
    }
  }
  for (std::size_t r = 0; r < covered.size(); ++r)
    for (std::size_t t = 0; t < covered[r].size(); ++t)
      if (covered[r][t] != 1)
        throw ValidationError("stitching error: step " + std::to_string(t) + " of '" +
                              records[r]->subject_id + "' predicted " +
                              std::to_string(covered[r][t]) + " times");
  return sessions;
}

TrainResult train(const RunConfig &config, const StepCallback &on_step) {
  if (config.paths.output.empty())
    throw ValidationError("paths.output must be set");
  const RecordSet train_records = load_record_set(config.paths.train);
  const RecordSet dev_records =
    config.paths.dev.empty() ? RecordSet{} : load_record_set(config.paths.dev);
  return train(config, train_records, dev_records, on_step);
}

TrainResult train(const RunConfig &config, const RecordSet &train_records,
                  const RecordSet &dev_records, const StepCallback &on_step) {
  config.validate();
  if (train_records.empty())
    throw ValidationError("no training records");
  const SequenceRecord &reference = *train_records.front();
  check_schema(train_records, reference, "training");
  check_schema(dev_records, reference, "development");
  const ExecutionPlan plan =
    validate_graph_or_throw(config.model, reference.modalities, reference.label_dim());
  const std::string fingerprint = config.model.fingerprint();
  const auto &label_names = reference.label_names;

  Rng rng(config.seed);
  Model model(plan, rng());
  Optimizer optimizer(optimizer_settings(config));

  const fs::path out_dir = config.paths.output;
  const bool write = !out_dir.empty();
  if (write) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
      throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    write_json(out_dir / "config.resolved.json", config.to_json());
  }
  MetricsLog log(write ? out_dir / "metrics.csv" : fs::path{});

  auto snapshot = [&](std::size_t step) {
    Checkpoint ck;
    ck.step = step;
    ck.fingerprint = fingerprint;
    std::ostringstream rs;
    rs << rng;
    ck.rng_state = rs.str();
    ck.config = config.to_json();
    ck.parameters = capture_parameters(model);
    ck.optimizer_kind = optimizer.settings().kind;
    ck.optimizer_iterations = optimizer.iterations();
    ck.optimizer_state = optimizer.export_state();
    return ck;
  };

  auto dev_report = [&]() {
    auto sessions = predict_sessions(model, dev_records, config.provider.seq_len,
                                     config.provider.batch_size);
    return std::make_pair(evaluate_sessions(sessions, label_names, config.evaluation.pooling),
                          std::move(sessions));
  };

  std::vector<WindowView> windows;
  for (const auto &r : train_records) {
    auto w = make_windows(r, config.provider.seq_len, config.provider.hop);
    windows.insert(windows.end(), w.begin(), w.end());
  }

  TrainResult result;
  std::string last_good = "none";
  std::size_t step = 0;
  while (step < config.schedule.max_steps) {
    BatchOptions opts;
    opts.seq_len = config.provider.seq_len;
    opts.batch_size = config.provider.batch_size;
    opts.prefetch = config.provider.prefetch;
    if (config.provider.shuffle)
      opts.shuffle_seed = rng();
    BatchStream stream(windows, opts);
    const std::size_t epoch_start = step;
    while (step < config.schedule.max_steps) {
      auto batch = stream.next();
      if (!batch)
        break;
      const std::size_t next_step = step + 1;
      if (batch->mask.count() < 2) {
        log.row(next_step, "train", "skipped_batch", "all", 1.0);
        continue;
      }
      model.zero_grad();
      const Matrix pred = model.forward(*batch);
      const LossResult loss = config.loss.kind == "ccc"
                                ? ccc_loss(pred, batch->labels, batch->mask, config.loss.pooling)
                                : cross_entropy_loss(pred, batch->labels, batch->mask);
      if (!std::isfinite(loss.loss))
        throw NumericalAbort("non-finite training loss at step " + std::to_string(next_step) +
                               "; last good checkpoint: " + last_good,
                             static_cast<long>(next_step), last_good);
      model.backward(loss.grad);
      const auto params = model.parameters();
      if (!std::isfinite(global_grad_norm(params)))
        throw NumericalAbort("non-finite gradient at step " + std::to_string(next_step) +
                               "; last good checkpoint: " + last_good,
                             static_cast<long>(next_step), last_good);
      optimizer.step(params);
      step = next_step;
      result.losses.push_back(loss.loss);
      log.row(step, "train", "loss", "all", loss.loss);
      if (on_step)
        on_step(step, loss.loss);

      if (!dev_records.empty() && config.schedule.eval_every > 0 &&
          step % config.schedule.eval_every == 0) {
        auto report = dev_report().first;
        for (std::size_t k = 0; k < report.ccc.size(); ++k)
          log.row(step, "dev", "ccc", label_names[k], report.ccc[k]);
        result.evaluations.push_back({step, std::move(report)});
      }
      if (write && config.schedule.checkpoint_every > 0 &&
          step % config.schedule.checkpoint_every == 0) {
        std::ostringstream name;
        name << "step-" << std::setw(6) << std::setfill('0') << step;
        const fs::path dir = out_dir / "checkpoints" / name.str();
        save_checkpoint(snapshot(step), dir);
        last_good = dir.string();
      }
    }
    if (step == epoch_start)
      throw ValidationError("training records produce no usable batches");
  }

  result.steps = step;
  result.checkpoint = snapshot(step);
  if (write) {
    result.checkpoint_dir = out_dir / "checkpoint";
    save_checkpoint(result.checkpoint, result.checkpoint_dir);
  }

  if (!dev_records.empty()) {
    auto [report, sessions] = dev_report();
    for (std::size_t k = 0; k < report.ccc.size(); ++k)
      log.row(step, "dev", "final_ccc", label_names[k], report.ccc[k]);
    nlohmann::json reports = {{"raw", report.to_json()}};
    result.final_dev = report;
    if (config.postprocess.fit) {
      const auto targets = gold_statistics(config.postprocess.targets == "train"
                                             ? gold_sessions(train_records)
                                             : gold_sessions(dev_records));
      FitGrids grids{config.postprocess.windows, config.postprocess.shifts};
      auto pp = fit_postprocess(sessions, label_names, targets, grids);
      auto processed = apply_postprocess(pp, sessions);
      auto pp_report = evaluate_sessions(processed, label_names, config.evaluation.pooling);
      pp_report.postprocessed = true;
      for (std::size_t k = 0; k < pp_report.ccc.size(); ++k)
        log.row(step, "dev", "final_ccc_postprocessed", label_names[k], pp_report.ccc[k]);
      reports["postprocessed"] = pp_report.to_json();
      if (write)
        pp.save(out_dir / "postprocess.json");
      result.final_dev_postprocessed = pp_report;
      result.postprocess = std::move(pp);
    }
    if (write)
      write_json(out_dir / "dev_report.json", reports);
  }
  return result;
}

LoadedModel restore_model(const Checkpoint &checkpoint, const RecordSet &records,
                          const std::optional<std::string> &expected_fingerprint) {
  if (records.empty())
    throw ValidationError("no records to run the model on");
  LoadedModel out;
  out.config = RunConfig::from_json(checkpoint.config);
  const std::string actual = out.config.model.fingerprint();
  if (actual != checkpoint.fingerprint)
    throw CorruptionError("checkpoint fingerprint " + checkpoint.fingerprint +
                            " does not match its stored graph (" + actual + ")",
                          0);
  if (expected_fingerprint && *expected_fingerprint != checkpoint.fingerprint)
    throw ValidationError("graph fingerprint mismatch: checkpoint " + checkpoint.fingerprint +
                          ", provided " + *expected_fingerprint);
  const SequenceRecord &reference = *records.front();
  check_schema(records, reference, "input");
  auto plan = validate_graph_or_throw(out.config.model, reference.modalities,
                                      reference.label_dim());
  out.model = std::make_unique<Model>(std::move(plan), 0);
  restore_parameters(*out.model, checkpoint.parameters);
  out.label_names = reference.label_names;
  out.step_period = reference.step_period;
  return out;
}

ScoreReport evaluate(const Checkpoint &checkpoint, const RecordSet &records,
                     const PostProcessParams *postprocess,
                     const std::optional<std::string> &expected_fingerprint,
                     std::optional<SessionPooling> pooling) {
  auto loaded = restore_model(checkpoint, records, expected_fingerprint);
  auto sessions = predict_sessions(*loaded.model, records, loaded.config.provider.seq_len,
                                   loaded.config.provider.batch_size);
  if (postprocess) {
    if (postprocess->label_names != loaded.label_names)
      throw ValidationError("post-processing parameters were fitted for different labels");
    sessions = apply_postprocess(*postprocess, sessions);
  }
  auto report = evaluate_sessions(sessions, loaded.label_names,
                                  pooling.value_or(loaded.config.evaluation.pooling));
  report.postprocessed = postprocess != nullptr;
  return report;
}

std::vector<fs::path> predict(const Checkpoint &checkpoint, const RecordSet &records,
                              const fs::path &out_dir,
                              const std::optional<std::string> &expected_fingerprint) {
  auto loaded = restore_model(checkpoint, records, expected_fingerprint);
  auto sessions = predict_sessions(*loaded.model, records, loaded.config.provider.seq_len,
                                   loaded.config.provider.batch_size);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> files;
  for (std::size_t r = 0; r < sessions.size(); ++r) {
    const fs::path path = out_dir / (sessions[r].subject_id + ".csv");
    std::ofstream out(path, std::ios::trunc);
    if (!out)
      throw IoError("cannot write " + path.string());
    out << "time";
    for (const auto &n : loaded.label_names)
      out << ',' << n;
    out << '\n' << std::setprecision(17);
    const double period = records[r]->step_period;
    for (Eigen::Index t = 0; t < sessions[r].pred.rows(); ++t) {
      out << static_cast<double>(t) * period;
      for (Eigen::Index k = 0; k < sessions[r].pred.cols(); ++k)
        out << ',' << sessions[r].pred(t, k);
      out << '\n';
    }
    if (!out)
      throw IoError("failed writing " + path.string());
    files.push_back(path);
  }
  return files;
}

} // namespace e2y
