// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Run configuration: schema, defaults, JSON/YAML loading and
 *         dotted-key overrides.
 *
 * Top-level keys: paths, provider, model, optimizer, schedule, loss,
 * evaluation, postprocess, seed. Unknown keys are rejected; `model` holds a
 * graph and is validated by GraphSpec.
 */
#pragma once

#include <e2y/graph.hpp>
#include <e2y/metrics.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace e2y {

struct RunConfig {
  struct Paths {
    std::string train;
    std::string dev;
    std::string output;
  } paths;

  struct Provider {
    std::size_t seq_len = 150;
    std::size_t hop = 150;
    std::size_t batch_size = 8;
    std::size_t prefetch = 2;
    bool shuffle = true;
  } provider;

  GraphSpec model;

  struct Optimizer {
    std::string kind = "adam"; ///< adam | sgd
    double learning_rate = 1e-4;
    double clip_norm = 5.0;    ///< 0 disables clipping
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double momentum = 0.0;     ///< sgd only
  } optimizer;

  struct Schedule {
    std::size_t max_steps = 1000;
    std::size_t eval_every = 100;       ///< 0 disables periodic evaluation
    std::size_t checkpoint_every = 500; ///< 0 keeps only the final checkpoint
  } schedule;

  struct Loss {
    std::string kind = "ccc"; ///< ccc | cross_entropy
    LossPooling pooling = LossPooling::batch;
  } loss;

  struct Evaluation {
    SessionPooling pooling = SessionPooling::concatenate;
  } evaluation;

  struct Postprocess {
    bool fit = true;
    std::vector<std::size_t> windows;
    std::vector<std::size_t> shifts;
    std::string targets = "train"; ///< train | dev
  } postprocess;

  std::uint64_t seed = 0;

  /// Full default tree with an empty model.
  static nlohmann::json defaults();
  /// Merges `j` over the defaults, type-checks and validates.
  static RunConfig from_json(const nlohmann::json &j);
  nlohmann::json to_json() const;

  /// `.json` files parse as JSON, everything else as YAML.
  static RunConfig load(const std::filesystem::path &path);
  static nlohmann::json load_tree(const std::filesystem::path &path);

  /// Checks value ranges; throws ValidationError.
  void validate() const;
};

/// Applies `key.path=value` to a config tree. The value parses as JSON when
/// possible and as a plain string otherwise; its type must match the
/// existing entry. Numeric path segments index arrays.
void apply_override(nlohmann::json &tree, const std::string &assignment);

/// YAML text to the equivalent JSON tree.
nlohmann::json yaml_to_json(const std::string &text);

/// `paths.output` if set, else `$E2Y_OUT`, else `./e2y_out`.
std::filesystem::path resolve_output_dir(const RunConfig &config);

} // namespace e2y
