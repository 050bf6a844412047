// SPDX-License-Identifier: Apache-2.0
/**
 * @file   graph.hpp
 * @brief  Declarative model graphs: validation, width inference and
 *         instantiation into an executable Model.
 *
 * A graph is a list of nodes. `input` nodes bind a record modality; every
 * other node names a registered block kind, its input node ids and its
 * hyperparameters. Built-in kinds: audio_frontend, visual_frontend,
 * recurrent, fully_connected, concat. Additional kinds can be registered on
 * a BlockRegistry and compose under the same rules.
 *
 * JSON form:
 *   {"nodes": [{"id": "audio", "kind": "input", "modality": "audio"},
 *              {"id": "conv", "kind": "audio_frontend", "inputs": ["audio"]},
 *              {"id": "rnn", "kind": "recurrent", "inputs": ["conv"],
 *               "cell": "gru", "num_layers": 2, "hidden_units": 64},
 *              {"id": "head", "kind": "fully_connected", "inputs": ["rnn"],
 *               "widths": [2], "head": true}],
 *    "output": "head"}
 */
#pragma once

#include <e2y/blocks.hpp>
#include <e2y/error.hpp>
#include <e2y/provider.hpp>
#include <e2y/record.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace e2y {

struct NodeSpec {
  std::string id;
  std::string kind;
  std::vector<std::string> inputs;
  std::string modality;    ///< input nodes only
  nlohmann::json params = nlohmann::json::object(); ///< remaining keys
};

struct GraphSpec {
  std::vector<NodeSpec> nodes;
  std::string output;

  static GraphSpec from_json(const nlohmann::json &j);
  nlohmann::json to_json() const;
  /// FNV-1a over the canonical JSON text, as 16 hex digits.
  std::string fingerprint() const;
};

/// What flows along an edge.
struct StreamInfo {
  std::size_t width = 0;
  std::optional<ModalityDescriptor> modality; ///< set for raw input nodes
};

/// One registered block family.
class BlockKind {
public:
  virtual ~BlockKind() = default;
  /// Checks hyperparameters and inputs. Returns the output width, or
  /// nullopt after appending at least one message to `errors`.
  virtual std::optional<std::size_t> infer(const NodeSpec &node,
                                           std::span<const StreamInfo> inputs,
                                           std::vector<std::string> &errors) const = 0;
  /// Called only for nodes that passed `infer`.
  virtual std::unique_ptr<Block> create(const NodeSpec &node,
                                        std::span<const StreamInfo> inputs,
                                        Rng &rng) const = 0;
};

class BlockRegistry {
public:
  /// Registry pre-populated with the built-in kinds.
  static BlockRegistry &global();
  static BlockRegistry with_builtins();

  void add(const std::string &kind, std::shared_ptr<const BlockKind> impl);
  const BlockKind *find(const std::string &kind) const;

private:
  std::map<std::string, std::shared_ptr<const BlockKind>> kinds_;
};

struct GraphIssue {
  std::string node_id;
  std::string message;
};

class GraphValidationError : public ValidationError {
public:
  explicit GraphValidationError(std::vector<GraphIssue> issues);
  const std::vector<GraphIssue> &issues() const { return issues_; }

private:
  std::vector<GraphIssue> issues_;
};

struct PlanStep {
  NodeSpec node;
  std::vector<std::size_t> inputs; ///< indices of earlier plan steps
  StreamInfo output;
};

/// Topologically ordered, width-annotated graph.
struct ExecutionPlan {
  GraphSpec spec;
  std::vector<PlanStep> steps;
  std::size_t output_step = 0;
  std::size_t label_dim = 0;

  /// Multi-line "id (kind): inputs -> width" listing.
  std::string describe() const;
};

struct ValidationResult {
  std::optional<ExecutionPlan> plan;
  std::vector<GraphIssue> issues;
  bool ok() const { return plan.has_value(); }
};

/// Collects every violation rather than stopping at the first.
ValidationResult validate_graph(const GraphSpec &spec,
                                const std::vector<ModalityDescriptor> &modalities,
                                std::size_t label_dim,
                                const BlockRegistry &registry = BlockRegistry::global());

/// Throws GraphValidationError listing all issues.
ExecutionPlan validate_graph_or_throw(const GraphSpec &spec,
                                      const std::vector<ModalityDescriptor> &modalities,
                                      std::size_t label_dim,
                                      const BlockRegistry &registry = BlockRegistry::global());

/// Executable graph; parameters initialized deterministically from `seed`.
class Model {
public:
  Model(ExecutionPlan plan, std::uint64_t seed,
        const BlockRegistry &registry = BlockRegistry::global());

  /// Predictions of shape (batch*seq) x label_dim; masked rows are zero.
  Matrix forward(const Batch &batch);
  /// Back-propagates d(loss)/d(predictions) into parameter gradients.
  void backward(const Matrix &grad_predictions);

  std::vector<Parameter *> parameters();
  void zero_grad();
  std::size_t num_parameters();
  const ExecutionPlan &plan() const { return plan_; }
  /// Widths observed on the most recent forward pass, per plan step.
  const std::vector<std::size_t> &observed_widths() const { return observed_; }

private:
  ExecutionPlan plan_;
  std::vector<std::unique_ptr<Block>> blocks_; ///< null for input steps
  std::vector<Matrix> outputs_;
  std::vector<std::size_t> observed_;
  StepMask mask_;
};

} // namespace e2y
