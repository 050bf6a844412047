// SPDX-License-Identifier: Apache-2.0
#include <e2y/cli.hpp>
#include <e2y/config.hpp>
#include <e2y/engine.hpp>
#include <e2y/error.hpp>
#include <e2y/ingestion.hpp>
#include <e2y/record.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

namespace e2y {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> parse_label_schema(const std::string &arg) {
  std::string text = arg;
  if (fs::is_regular_file(arg)) {
    std::ifstream in(arg);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  std::vector<std::string> names;
  std::string cur;
  auto flush = [&] {
    auto b = cur.find_first_not_of(" \t\r");
    auto e = cur.find_last_not_of(" \t\r");
    if (b != std::string::npos)
      names.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (char c : text) {
    if (c == ',' || c == '\n')
      flush();
    else
      cur += c;
  }
  flush();
  if (names.empty())
    throw ValidationError("label schema is empty");
  return names;
}

int cmd_generate(const fs::path &manifest, const fs::path &out_dir, double step_period,
                 const std::string &labels_schema, bool strict, std::ostream &out,
                 std::ostream &err) {
  if (!(step_period > 0.0) || !std::isfinite(step_period))
    throw ParameterError("--step-period must be a positive number");
  const auto rows = read_manifest(manifest);
  const auto names =
    labels_schema.empty() ? std::vector<std::string>{} : parse_label_schema(labels_schema);
  std::vector<SequenceRecord> records;
  std::size_t failures = 0;
  for (const auto &row : rows) {
    try {
      records.push_back(generate_record(row, step_period, names));
    } catch (const Error &e) {
      if (strict)
        throw;
      ++failures;
      err << "skipped " << row.subject_id << ": " << e.what() << "\n";
    }
  }
  const auto report = write_records(records, out_dir);
  out << "subject_id,steps,bytes,path\n";
  for (std::size_t i = 0; i < records.size(); ++i)
    out << records[i].subject_id << ',' << records[i].num_steps << ','
        << report.files[i].bytes << ',' << report.files[i].path.string() << "\n";
  out << "wrote " << records.size() << " record(s), skipped " << failures << "\n";
  return kExitOk;
}

int cmd_train(const fs::path &config_path, const std::vector<std::string> &overrides,
              std::ostream &out) {
  auto tree = RunConfig::load_tree(config_path);
  for (const auto &o : overrides)
    apply_override(tree, o);
  RunConfig config = RunConfig::from_json(tree);
  config.paths.output = resolve_output_dir(config).string();
  if (config.paths.train.empty())
    throw ValidationError("paths.train must be set");
  if (!fs::exists(config.paths.train))
    throw ValidationError("training record path does not exist: " + config.paths.train);
  if (!config.paths.dev.empty() && !fs::exists(config.paths.dev))
    throw ValidationError("development record path does not exist: " + config.paths.dev);
  const auto result = train(config, [&](std::size_t step, double loss) {
    if (step == 1 || step % 100 == 0)
      out << "step " << step << " loss " << std::fixed << std::setprecision(6) << loss << "\n";
  });
  out << "trained " << result.steps << " step(s); checkpoint " << result.checkpoint_dir.string()
      << "\n";
  if (result.final_dev)
    out << result.final_dev->table();
  if (result.final_dev_postprocessed)
    out << result.final_dev_postprocessed->table();
  return kExitOk;
}

std::optional<std::string> expected_fingerprint(const std::string &config_path) {
  if (config_path.empty())
    return std::nullopt;
  return RunConfig::load(config_path).model.fingerprint();
}

int cmd_evaluate(const fs::path &checkpoint, const fs::path &records,
                 const std::string &config_path, const std::string &postprocess,
                 const std::string &report_path, const std::string &pooling, std::ostream &out) {
  const auto ck = load_checkpoint(checkpoint);
  const auto set = load_record_set(records);
  std::optional<PostProcessParams> pp;
  if (!postprocess.empty())
    pp = PostProcessParams::load(postprocess);
  std::optional<SessionPooling> pool;
  if (!pooling.empty())
    pool = session_pooling_from_string(pooling);
  const auto report =
    evaluate(ck, set, pp ? &*pp : nullptr, expected_fingerprint(config_path), pool);
  out << report.table();
  if (!report_path.empty()) {
    std::ofstream f(report_path, std::ios::trunc);
    if (!f)
      throw IoError("cannot write " + report_path);
    f << report.to_json().dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_predict(const fs::path &checkpoint, const fs::path &records, const fs::path &out_dir,
                const std::string &config_path, std::ostream &out) {
  const auto ck = load_checkpoint(checkpoint);
  const auto set = load_record_set(records);
  const auto files = predict(ck, set, out_dir, expected_fingerprint(config_path));
  for (const auto &f : files)
    out << f.string() << "\n";
  return kExitOk;
}

int cmd_inspect(const fs::path &path, std::ostream &out) {
  RecordFile file(path);
  const auto &h = file.header();
  out << "file: " << path.string() << "\n"
      << "bytes: " << file.file_size() << "\n"
      << "version: " << h.version << "\n"
      << "subject_id: " << h.subject_id << "\n"
      << "step_period: " << std::setprecision(17) << h.step_period << "\n"
      << "num_steps: " << h.num_steps << "\n"
      << "labels:";
  for (const auto &n : h.label_names)
    out << ' ' << n;
  out << "\nmodalities:\n";
  for (const auto &m : h.modalities) {
    out << "  " << m.name << " kind=" << to_string(m.kind) << " rate=" << m.sample_rate
        << " dtype=" << to_string(m.dtype) << " frame_shape=[";
    for (std::size_t i = 0; i < m.frame_shape.size(); ++i)
      out << (i ? "," : "") << m.frame_shape[i];
    out << "]\n";
  }
  const auto record = file.load();
  out << "label statistics:\n" << std::setprecision(6) << std::fixed;
  for (std::size_t k = 0; k < record.label_dim(); ++k) {
    double sum = 0, sq = 0, lo = INFINITY, hi = -INFINITY;
    for (std::size_t s = 0; s < record.num_steps; ++s) {
      const double v = record.label(s, k);
      sum += v;
      sq += v * v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double n = static_cast<double>(std::max<std::size_t>(record.num_steps, 1));
    const double mean = sum / n;
    out << "  " << record.label_names[k] << " mean=" << mean
        << " std=" << std::sqrt(std::max(0.0, sq / n - mean * mean)) << " min=" << lo
        << " max=" << hi << "\n";
  }
  return kExitOk;
}

} // namespace

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"e2y: multimodal sequence regression toolkit", "e2y"};
  app.require_subcommand(1);

  fs::path manifest, gen_out;
  double step_period = 0.0;
  std::string labels_schema;
  bool strict = false;
  auto *gen = app.add_subcommand("generate", "convert raw files listed in a manifest to records");
  gen->add_option("--manifest", manifest, "manifest CSV")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--step-period", step_period, "label step in seconds")->required();
  gen->add_option("--labels-schema", labels_schema, "comma list or file of label names");
  gen->add_flag("--strict", strict, "fail on the first bad subject");

  fs::path config_path;
  std::vector<std::string> overrides;
  auto *tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "JSON or YAML config")->required();
  tr->add_option("overrides", overrides, "key.path=value overrides");

  fs::path checkpoint, records, pred_out;
  std::string eval_config, postprocess, report, pooling;
  auto *ev = app.add_subcommand("evaluate", "score a checkpoint on records");
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ev->add_option("--records", records, "record file or directory")->required();
  ev->add_option("--config", eval_config, "config whose graph must match the checkpoint");
  ev->add_option("--postprocess", postprocess, "fitted post-processing parameters");
  ev->add_option("--report", report, "write the JSON report here");
  ev->add_option("--pooling", pooling, "concatenate | per_subject");

  auto *pr = app.add_subcommand("predict", "write per-subject prediction CSVs");
  pr->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  pr->add_option("--records", records, "record file or directory")->required();
  pr->add_option("--out", pred_out, "output directory")->required();
  pr->add_option("--config", eval_config, "config whose graph must match the checkpoint");

  fs::path inspect_path;
  auto *in = app.add_subcommand("inspect", "print a record file's header and statistics");
  in->add_option("file", inspect_path, "record file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen)
      return cmd_generate(manifest, gen_out, step_period, labels_schema, strict, out, err);
    if (*tr)
      return cmd_train(config_path, overrides, out);
    if (*ev)
      return cmd_evaluate(checkpoint, records, eval_config, postprocess, report, pooling, out);
    if (*pr)
      return cmd_predict(checkpoint, records, pred_out, eval_config, out);
    if (*in)
      return cmd_inspect(inspect_path, out);
  } catch (const NumericalAbort &e) {
    err << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ValidationError &e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError &e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}

} // namespace e2y
