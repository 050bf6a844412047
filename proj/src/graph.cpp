// SPDX-License-Identifier: Apache-2.0
#include <e2y/audio_frontend.hpp>
#include <e2y/error.hpp>
#include <e2y/fully_connected.hpp>
#include <e2y/graph.hpp>
#include <e2y/recurrent.hpp>
#include <e2y/visual_frontend.hpp>

#include <cstdio>
#include <set>
#include <sstream>

namespace e2y {

GraphSpec GraphSpec::from_json(const nlohmann::json &j) {
  if (!j.is_object())
    throw ValidationError("model: expected an object with 'nodes' and 'output'");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "nodes" && it.key() != "output")
      throw ValidationError("model: unknown key '" + it.key() + "'");
  GraphSpec g;
  try {
    for (const auto &n : j.at("nodes")) {
      NodeSpec node;
      node.id = n.at("id").get<std::string>();
      node.kind = n.at("kind").get<std::string>();
      if (n.contains("inputs"))
        node.inputs = n.at("inputs").get<std::vector<std::string>>();
      if (n.contains("modality"))
        node.modality = n.at("modality").get<std::string>();
      for (auto it = n.begin(); it != n.end(); ++it)
        if (it.key() != "id" && it.key() != "kind" && it.key() != "inputs" &&
            it.key() != "modality")
          node.params[it.key()] = it.value();
      g.nodes.push_back(std::move(node));
    }
    g.output = j.at("output").get<std::string>();
  } catch (const nlohmann::json::exception &e) {
    throw ValidationError(std::string("model: malformed graph spec: ") + e.what());
  }
  return g;
}

nlohmann::json GraphSpec::to_json() const {
  nlohmann::json nodes_json = nlohmann::json::array();
  for (const auto &n : nodes) {
    nlohmann::json o = n.params;
    o["id"] = n.id;
    o["kind"] = n.kind;
    if (!n.inputs.empty())
      o["inputs"] = n.inputs;
    if (!n.modality.empty())
      o["modality"] = n.modality;
    nodes_json.push_back(std::move(o));
  }
  return {{"nodes", nodes_json}, {"output", output}};
}

std::string GraphSpec::fingerprint() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

GraphValidationError::GraphValidationError(std::vector<GraphIssue> issues)
  : ValidationError([&] {
      std::string msg = "invalid model graph:";
      for (const auto &i : issues)
        msg += "\n  [" + (i.node_id.empty() ? std::string("<graph>") : i.node_id) + "] " +
               i.message;
      return msg;
    }()),
    issues_(std::move(issues)) {}

namespace {

// Reads typed hyperparameters, recording unknown keys and type errors.
class ParamReader {
public:
  ParamReader(const NodeSpec &node, std::vector<std::string> &errors)
    : node_(node), errors_(errors) {}

  template <typename T> T get(const std::string &key, T fallback) {
    seen_.insert(key);
    if (!node_.params.contains(key))
      return fallback;
    try {
      return node_.params.at(key).get<T>();
    } catch (const nlohmann::json::exception &) {
      errors_.push_back("parameter '" + key + "' has the wrong type");
      return fallback;
    }
  }
  bool has(const std::string &key) const { return node_.params.contains(key); }
  const nlohmann::json &raw(const std::string &key) {
    seen_.insert(key);
    return node_.params.at(key);
  }
  void finish() {
    for (auto it = node_.params.begin(); it != node_.params.end(); ++it)
      if (!seen_.count(it.key()))
        errors_.push_back("unknown parameter '" + it.key() + "'");
  }

private:
  const NodeSpec &node_;
  std::vector<std::string> &errors_;
  std::set<std::string> seen_;
};

std::string describe_stream(const StreamInfo &s) {
  if (!s.modality)
    return "a block output of width " + std::to_string(s.width);
  return to_string(s.modality->kind) + " modality '" + s.modality->name + "'";
}

bool expect_arity(std::span<const StreamInfo> inputs, std::size_t n,
                  std::vector<std::string> &errors) {
  if (inputs.size() != n) {
    errors.push_back("expects exactly " + std::to_string(n) + " input(s), got " +
                     std::to_string(inputs.size()));
    return false;
  }
  return true;
}

AudioFrontendSpec parse_audio(const NodeSpec &node, std::vector<std::string> &errors) {
  ParamReader p(node, errors);
  AudioFrontendSpec spec;
  if (p.has("blocks")) {
    spec.blocks.clear();
    try {
      for (const auto &b : p.raw("blocks")) {
        ConvPoolSpec c;
        for (auto it = b.begin(); it != b.end(); ++it)
          if (it.key() != "num_filters" && it.key() != "kernel_size" &&
              it.key() != "pool_size")
            errors.push_back("unknown audio block parameter '" + it.key() + "'");
        c.num_filters = b.value("num_filters", c.num_filters);
        c.kernel_size = b.value("kernel_size", c.kernel_size);
        c.pool_size = b.value("pool_size", c.pool_size);
        spec.blocks.push_back(c);
      }
    } catch (const nlohmann::json::exception &) {
      errors.push_back("parameter 'blocks' must be a list of {num_filters, kernel_size, pool_size}");
    }
  }
  try {
    spec.activation = activation_from_string(p.get<std::string>("activation", "relu"));
  } catch (const ValidationError &e) {
    errors.push_back(e.what());
  }
  p.finish();
  return spec;
}

VisualFrontendSpec parse_visual(const NodeSpec &node, std::vector<std::string> &errors) {
  ParamReader p(node, errors);
  VisualFrontendSpec spec;
  spec.depth = p.get<std::size_t>("depth", spec.depth);
  spec.base_width = p.get<std::size_t>("base_width", spec.base_width);
  spec.num_stages = p.get<std::size_t>("num_stages", spec.num_stages);
  p.finish();
  return spec;
}

RecurrentSpec parse_recurrent(const NodeSpec &node, std::vector<std::string> &errors) {
  ParamReader p(node, errors);
  RecurrentSpec spec;
  try {
    spec.cell = cell_kind_from_string(p.get<std::string>("cell", "gru"));
  } catch (const ValidationError &e) {
    errors.push_back(e.what());
  }
  spec.num_layers = p.get<std::size_t>("num_layers", spec.num_layers);
  spec.hidden_units = p.get<std::size_t>("hidden_units", spec.hidden_units);
  p.finish();
  return spec;
}

FullyConnectedSpec parse_fc(const NodeSpec &node, std::vector<std::string> &errors) {
  ParamReader p(node, errors);
  FullyConnectedSpec spec;
  spec.head = p.get<bool>("head", false);
  Activation default_act = Activation::relu;
  try {
    default_act = activation_from_string(p.get<std::string>("activation", "relu"));
  } catch (const ValidationError &e) {
    errors.push_back(e.what());
  }
  if (p.has("widths")) {
    for (auto w : p.get<std::vector<std::size_t>>("widths", {}))
      spec.layers.push_back({w, default_act});
  }
  if (p.has("layers")) {
    try {
      for (const auto &l : p.raw("layers")) {
        DenseLayerSpec d;
        d.width = l.at("width").get<std::size_t>();
        d.activation = activation_from_string(
          l.value("activation", to_string(default_act)));
        spec.layers.push_back(d);
      }
    } catch (const nlohmann::json::exception &) {
      errors.push_back("parameter 'layers' must be a list of {width, activation}");
    } catch (const ValidationError &e) {
      errors.push_back(e.what());
    }
  }
  p.finish();
  return spec;
}

class AudioKind final : public BlockKind {
public:
  std::optional<std::size_t> infer(const NodeSpec &node, std::span<const StreamInfo> in,
                                   std::vector<std::string> &errors) const override {
    auto before = errors.size();
    auto spec = parse_audio(node, errors);
    if (!expect_arity(in, 1, errors))
      return std::nullopt;
    if (!in[0].modality || in[0].modality->kind != ModalityKind::audio) {
      errors.push_back("modality mismatch: audio_frontend must take an input node bound "
                       "to an audio modality, got " + describe_stream(in[0]));
      return std::nullopt;
    }
    if (errors.size() != before)
      return std::nullopt;
    try {
      return audio_feature_width(spec, in[0].modality->frame_shape.at(0));
    } catch (const ValidationError &e) {
      errors.push_back(e.what());
      return std::nullopt;
    }
  }
  std::unique_ptr<Block> create(const NodeSpec &node, std::span<const StreamInfo> in,
                                Rng &rng) const override {
    std::vector<std::string> ignored;
    return make_audio_frontend(node.id, parse_audio(node, ignored),
                               in[0].modality->frame_shape.at(0), rng);
  }
};

class VisualKind final : public BlockKind {
public:
  std::optional<std::size_t> infer(const NodeSpec &node, std::span<const StreamInfo> in,
                                   std::vector<std::string> &errors) const override {
    auto before = errors.size();
    auto spec = parse_visual(node, errors);
    if (!expect_arity(in, 1, errors))
      return std::nullopt;
    if (!in[0].modality || in[0].modality->kind != ModalityKind::video) {
      errors.push_back("modality mismatch: visual_frontend must take an input node bound "
                       "to a video modality, got " + describe_stream(in[0]));
      return std::nullopt;
    }
    if (errors.size() != before)
      return std::nullopt;
    try {
      const auto &s = in[0].modality->frame_shape;
      check_visual_input(spec, s.at(0), s.at(1), s.at(2));
      return spec.output_dim();
    } catch (const ValidationError &e) {
      errors.push_back(e.what());
      return std::nullopt;
    }
  }
  std::unique_ptr<Block> create(const NodeSpec &node, std::span<const StreamInfo> in,
                                Rng &rng) const override {
    std::vector<std::string> ignored;
    const auto &s = in[0].modality->frame_shape;
    return make_visual_frontend(node.id, parse_visual(node, ignored), {s[0], s[1], s[2]},
                                rng);
  }
};

class RecurrentKind final : public BlockKind {
public:
  std::optional<std::size_t> infer(const NodeSpec &node, std::span<const StreamInfo> in,
                                   std::vector<std::string> &errors) const override {
    auto before = errors.size();
    auto spec = parse_recurrent(node, errors);
    try {
      spec.validate();
    } catch (const ValidationError &e) {
      errors.push_back(e.what());
    }
    if (!expect_arity(in, 1, errors) || errors.size() != before)
      return std::nullopt;
    return spec.hidden_units;
  }
  std::unique_ptr<Block> create(const NodeSpec &node, std::span<const StreamInfo> in,
                                Rng &rng) const override {
    std::vector<std::string> ignored;
    return make_recurrent(node.id, parse_recurrent(node, ignored), in[0].width, rng);
  }
};

class FullyConnectedKind final : public BlockKind {
public:
  std::optional<std::size_t> infer(const NodeSpec &node, std::span<const StreamInfo> in,
                                   std::vector<std::string> &errors) const override {
    auto before = errors.size();
    auto spec = parse_fc(node, errors);
    try {
      spec.validate();
    } catch (const ValidationError &e) {
      errors.push_back(e.what());
    }
    if (!expect_arity(in, 1, errors) || errors.size() != before)
      return std::nullopt;
    return spec.output_width();
  }
  std::unique_ptr<Block> create(const NodeSpec &node, std::span<const StreamInfo> in,
                                Rng &rng) const override {
    std::vector<std::string> ignored;
    return make_fully_connected(node.id, parse_fc(node, ignored), in[0].width, rng);
  }
};

class ConcatKind final : public BlockKind {
public:
  std::optional<std::size_t> infer(const NodeSpec &node, std::span<const StreamInfo> in,
                                   std::vector<std::string> &errors) const override {
    ParamReader p(node, errors);
    p.finish();
    if (in.size() < 2) {
      errors.push_back("concat needs at least 2 inputs, got " + std::to_string(in.size()));
      return std::nullopt;
    }
    std::size_t w = 0;
    for (const auto &s : in)
      w += s.width;
    return w;
  }
  std::unique_ptr<Block> create(const NodeSpec &, std::span<const StreamInfo> in,
                                Rng &) const override {
    std::vector<std::size_t> widths;
    for (const auto &s : in)
      widths.push_back(s.width);
    return make_concat(std::move(widths));
  }
};

} // namespace

BlockRegistry BlockRegistry::with_builtins() {
  BlockRegistry r;
  r.add("audio_frontend", std::make_shared<AudioKind>());
  r.add("visual_frontend", std::make_shared<VisualKind>());
  r.add("recurrent", std::make_shared<RecurrentKind>());
  r.add("fully_connected", std::make_shared<FullyConnectedKind>());
  r.add("concat", std::make_shared<ConcatKind>());
  return r;
}

BlockRegistry &BlockRegistry::global() {
  static BlockRegistry registry = with_builtins();
  return registry;
}

void BlockRegistry::add(const std::string &kind, std::shared_ptr<const BlockKind> impl) {
  if (kind == "input")
    throw ValidationError("'input' is a reserved node kind");
  kinds_[kind] = std::move(impl);
}

const BlockKind *BlockRegistry::find(const std::string &kind) const {
  auto it = kinds_.find(kind);
  return it == kinds_.end() ? nullptr : it->second.get();
}

ValidationResult validate_graph(const GraphSpec &spec,
                                const std::vector<ModalityDescriptor> &modalities,
                                std::size_t label_dim, const BlockRegistry &registry) {
  ValidationResult result;
  auto &issues = result.issues;
  auto issue = [&](const std::string &id, const std::string &msg) {
    issues.push_back({id, msg});
  };

  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto &n = spec.nodes[i];
    if (n.id.empty())
      issue("", "node " + std::to_string(i) + " has an empty id");
    else if (!index.emplace(n.id, i).second)
      issue(n.id, "duplicate node id");
  }
  if (spec.nodes.empty())
    issue("", "graph has no nodes");

  std::vector<std::vector<std::size_t>> preds(spec.nodes.size());
  std::vector<std::size_t> consumers(spec.nodes.size(), 0);
  std::vector<bool> node_ok(spec.nodes.size(), true);
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto &n = spec.nodes[i];
    if (n.kind == "input") {
      if (!n.inputs.empty())
        issue(n.id, "input nodes take no inputs");
      if (n.modality.empty())
        issue(n.id, "input node must name a modality");
    } else {
      if (!registry.find(n.kind)) {
        issue(n.id, "unknown block kind '" + n.kind + "'");
        node_ok[i] = false;
      }
      if (!n.modality.empty())
        issue(n.id, "only input nodes bind a modality");
      if (n.inputs.empty())
        issue(n.id, "block has no inputs");
    }
    for (const auto &src : n.inputs) {
      auto it = index.find(src);
      if (it == index.end()) {
        issue(n.id, "dangling input '" + src + "'");
        node_ok[i] = false;
      } else {
        preds[i].push_back(it->second);
        ++consumers[it->second];
      }
    }
  }
  auto out_it = index.find(spec.output);
  if (spec.output.empty() || out_it == index.end()) {
    issue("", "output node '" + spec.output + "' does not exist");
  }

  // Kahn's algorithm in declaration order for a stable plan.
  std::vector<std::size_t> indeg(spec.nodes.size());
  for (std::size_t i = 0; i < spec.nodes.size(); ++i)
    indeg[i] = preds[i].size();
  std::vector<std::size_t> order;
  std::vector<bool> done(spec.nodes.size(), false);
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
      if (done[i] || indeg[i] != 0)
        continue;
      done[i] = true;
      order.push_back(i);
      progress = true;
      for (std::size_t j = 0; j < spec.nodes.size(); ++j)
        for (auto p : preds[j])
          if (p == i)
            --indeg[j];
    }
  }
  if (order.size() != spec.nodes.size()) {
    for (std::size_t i = 0; i < spec.nodes.size(); ++i)
      if (!done[i])
        issue(spec.nodes[i].id, "node is part of a cycle");
  }
  if (out_it != index.end())
    for (std::size_t i = 0; i < spec.nodes.size(); ++i)
      if (consumers[i] == 0 && i != out_it->second)
        issue(spec.nodes[i].id, "node is neither consumed nor the graph output "
                                "(a graph has exactly one output node)");
  if (out_it != index.end() && consumers[out_it->second] != 0)
    issue(spec.output, "output node must not feed other nodes");

  // Width inference over the acyclic part, in topological order.
  std::vector<std::optional<StreamInfo>> info(spec.nodes.size());
  for (auto i : order) {
    const auto &n = spec.nodes[i];
    if (n.kind == "input") {
      const ModalityDescriptor *found = nullptr;
      for (const auto &m : modalities)
        if (m.name == n.modality)
          found = &m;
      if (!found) {
        issue(n.id, "modality '" + n.modality + "' is not present in the records");
        continue;
      }
      info[i] = StreamInfo{found->frame_size(), *found};
      continue;
    }
    if (!node_ok[i])
      continue;
    std::vector<StreamInfo> ins;
    bool inputs_ok = true;
    for (auto p : preds[i]) {
      if (!info[p])
        inputs_ok = false;
      else
        ins.push_back(*info[p]);
    }
    if (!inputs_ok)
      continue;
    std::vector<std::string> errors;
    auto width = registry.find(n.kind)->infer(n, ins, errors);
    for (const auto &e : errors)
      issue(n.id, e);
    if (width && errors.empty())
      info[i] = StreamInfo{*width, std::nullopt};
  }
  if (out_it != index.end() && info[out_it->second] &&
      info[out_it->second]->width != label_dim)
    issue(spec.output, "width mismatch: output width " +
                         std::to_string(info[out_it->second]->width) +
                         " differs from label_dim " + std::to_string(label_dim));
  if (label_dim == 0)
    issue("", "label_dim must be >= 1");
  if (!issues.empty())
    return result;

  ExecutionPlan plan;
  plan.spec = spec;
  plan.label_dim = label_dim;
  std::map<std::size_t, std::size_t> position;
  for (auto i : order) {
    PlanStep step;
    step.node = spec.nodes[i];
    for (auto p : preds[i])
      step.inputs.push_back(position.at(p));
    step.output = *info[i];
    position[i] = plan.steps.size();
    plan.steps.push_back(std::move(step));
  }
  plan.output_step = position.at(out_it->second);
  result.plan = std::move(plan);
  return result;
}

ExecutionPlan validate_graph_or_throw(const GraphSpec &spec,
                                      const std::vector<ModalityDescriptor> &modalities,
                                      std::size_t label_dim, const BlockRegistry &registry) {
  auto result = validate_graph(spec, modalities, label_dim, registry);
  if (!result.ok())
    throw GraphValidationError(std::move(result.issues));
  return std::move(*result.plan);
}

std::string ExecutionPlan::describe() const {
  std::ostringstream os;
  for (const auto &s : steps) {
    os << s.node.id << " (" << s.node.kind;
    if (!s.node.modality.empty())
      os << ":" << s.node.modality;
    os << ")";
    if (!s.inputs.empty()) {
      os << " <- ";
      for (std::size_t k = 0; k < s.inputs.size(); ++k)
        os << (k ? ", " : "") << steps[s.inputs[k]].node.id << "["
           << steps[s.inputs[k]].output.width << "]";
    }
    os << " -> " << s.output.width << "\n";
  }
  return os.str();
}

Model::Model(ExecutionPlan plan, std::uint64_t seed, const BlockRegistry &registry)
  : plan_(std::move(plan)) {
  Rng rng(seed);
  for (const auto &step : plan_.steps) {
    if (step.node.kind == "input") {
      blocks_.push_back(nullptr);
      continue;
    }
    std::vector<StreamInfo> ins;
    for (auto i : step.inputs)
      ins.push_back(plan_.steps[i].output);
    const auto *kind = registry.find(step.node.kind);
    if (!kind)
      throw ValidationError("unknown block kind '" + step.node.kind + "'");
    blocks_.push_back(kind->create(step.node, ins, rng));
  }
  outputs_.resize(plan_.steps.size());
  observed_.assign(plan_.steps.size(), 0);
}

Matrix Model::forward(const Batch &batch) {
  mask_ = batch.mask;
  for (std::size_t i = 0; i < plan_.steps.size(); ++i) {
    const auto &step = plan_.steps[i];
    if (!blocks_[i]) {
      const Matrix *frames = batch.find(step.node.modality);
      if (!frames)
        throw ValidationError("batch has no modality '" + step.node.modality + "'");
      outputs_[i] = *frames;
    } else {
      std::vector<const Matrix *> ins;
      for (auto j : step.inputs)
        ins.push_back(&outputs_[j]);
      outputs_[i] = blocks_[i]->forward(ins, mask_);
      zero_masked_rows(outputs_[i], mask_);
    }
    observed_[i] = static_cast<std::size_t>(outputs_[i].cols());
  }
  return outputs_[plan_.output_step];
}

void Model::backward(const Matrix &grad_predictions) {
  std::vector<Matrix> grads(plan_.steps.size());
  grads[plan_.output_step] = grad_predictions;
  for (std::size_t i = plan_.steps.size(); i-- > 0;) {
    if (!blocks_[i] || grads[i].size() == 0)
      continue;
    zero_masked_rows(grads[i], mask_);
    auto input_grads = blocks_[i]->backward(grads[i]);
    const auto &step = plan_.steps[i];
    for (std::size_t k = 0; k < step.inputs.size(); ++k) {
      auto j = step.inputs[k];
      if (!blocks_[j] || k >= input_grads.size() || input_grads[k].size() == 0)
        continue;
      if (grads[j].size() == 0)
        grads[j] = std::move(input_grads[k]);
      else
        grads[j] += input_grads[k];
    }
  }
  for (auto &o : outputs_)
    o.resize(0, 0);
}

std::vector<Parameter *> Model::parameters() {
  std::vector<Parameter *> out;
  for (auto &b : blocks_)
    if (b)
      for (auto *p : b->parameters())
        out.push_back(p);
  return out;
}

void Model::zero_grad() {
  for (auto *p : parameters())
    p->zero_grad();
}

std::size_t Model::num_parameters() {
  std::size_t n = 0;
  for (auto *p : parameters())
    n += p->size();
  return n;
}

} // namespace e2y
