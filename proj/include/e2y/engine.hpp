// SPDX-License-Identifier: Apache-2.0
/**
 * @file   engine.hpp
 * @brief  Training, evaluation and prediction loops.
 *
 * Output directory layout written by `train`:
 *   config.resolved.json    the merged configuration
 *   metrics.csv             step,split,metric,dimension,value
 *   checkpoints/step-N/     periodic checkpoints
 *   checkpoint/             final checkpoint
 *   postprocess.json        chain fitted on the dev partition
 *   dev_report.json         final dev scores
 */
#pragma once

#include <e2y/checkpoint.hpp>
#include <e2y/config.hpp>
#include <e2y/graph.hpp>
#include <e2y/metrics.hpp>
#include <e2y/postprocess.hpp>
#include <e2y/record.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace e2y {

using RecordSet = std::vector<std::shared_ptr<const SequenceRecord>>;

RecordSet load_record_set(const std::filesystem::path &path);
RecordSet share_records(std::vector<SequenceRecord> records);

struct EvalPoint {
  std::size_t step = 0;
  ScoreReport report;
};

struct TrainResult {
  std::size_t steps = 0;
  std::vector<double> losses; ///< one per optimization step
  std::vector<EvalPoint> evaluations;
  std::optional<ScoreReport> final_dev;
  std::optional<ScoreReport> final_dev_postprocessed;
  std::optional<PostProcessParams> postprocess;
  Checkpoint checkpoint;
  std::filesystem::path checkpoint_dir; ///< empty when nothing was written
};

/// Invoked after every optimization step with (step, loss).
using StepCallback = std::function<void(std::size_t, double)>;

/// Reads train/dev records from the configured paths. `config.paths.output`
/// must be set; artifacts go there.
TrainResult train(const RunConfig &config, const StepCallback &on_step = {});

/// In-memory variant. When `config.paths.output` is empty no files are
/// written.
TrainResult train(const RunConfig &config, const RecordSet &train_records,
                  const RecordSet &dev_records, const StepCallback &on_step = {});

/// Model restored from a checkpoint for the given record schema.
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<Model> model;
  std::vector<std::string> label_names;
  double step_period = 0.0;
};

/// Rebuilds the checkpointed graph against `records` and loads its
/// parameters. With `expected_fingerprint`, refuses a mismatching graph.
LoadedModel restore_model(const Checkpoint &checkpoint, const RecordSet &records,
                          const std::optional<std::string> &expected_fingerprint = {});

/// Full-length per-subject predictions: windows with hop == seq_len,
/// stitched in order.
std::vector<SessionSeries> predict_sessions(Model &model, const RecordSet &records,
                                            std::size_t seq_len, std::size_t batch_size);

ScoreReport evaluate(const Checkpoint &checkpoint, const RecordSet &records,
                     const PostProcessParams *postprocess,
                     const std::optional<std::string> &expected_fingerprint = {},
                     std::optional<SessionPooling> pooling = {});

/// Writes `<out>/<subject_id>.csv` with columns time,<labels>. Returns the
/// files written.
std::vector<std::filesystem::path> predict(const Checkpoint &checkpoint,
                                           const RecordSet &records,
                                           const std::filesystem::path &out_dir,
                                           const std::optional<std::string> &expected_fingerprint = {});

/// Model parameters as checkpoint tensors, in model order.
std::vector<NamedTensor> capture_parameters(Model &model);
/// Copies matching tensors into the model; every parameter must be present
/// with the same shape.
void restore_parameters(Model &model, const std::vector<NamedTensor> &tensors);

} // namespace e2y
