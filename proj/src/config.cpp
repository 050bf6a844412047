// SPDX-License-Identifier: Apache-2.0
#include <e2y/config.hpp>
#include <e2y/error.hpp>
#include <e2y/postprocess.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace e2y {

namespace {

using nlohmann::json;

std::string type_name(const json &j) {
  if (j.is_boolean())
    return "boolean";
  if (j.is_number_integer())
    return "integer";
  if (j.is_number())
    return "number";
  if (j.is_string())
    return "string";
  if (j.is_array())
    return "array";
  if (j.is_object())
    return "object";
  return "null";
}

bool compatible(const json &schema, const json &value) {
  if (schema.is_number_integer())
    return value.is_number_integer() || (value.is_number_float() &&
                                         value.get<double>() == std::floor(value.get<double>()));
  if (schema.is_number())
    return value.is_number();
  if (schema.is_boolean())
    return value.is_boolean();
  if (schema.is_string())
    return value.is_string();
  if (schema.is_array())
    return value.is_array();
  if (schema.is_object())
    return value.is_object();
  return true;
}

void merge_checked(json &base, const json &update, const std::string &prefix) {
  if (!update.is_object())
    throw ValidationError("config section '" + prefix + "' must be a mapping");
  for (auto it = update.begin(); it != update.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key()))
      throw ValidationError("unknown config key '" + key + "'");
    json &slot = base[it.key()];
    if (key == "model") {
      slot = it.value();
      continue;
    }
    if (!compatible(slot, it.value()))
      throw ValidationError("config key '" + key + "' expects " + type_name(slot) + ", got " +
                            type_name(it.value()));
    if (slot.is_object())
      merge_checked(slot, it.value(), key);
    else if (slot.is_number_integer() && it.value().is_number_float())
      slot = static_cast<std::int64_t>(it.value().get<double>());
    else
      slot = it.value();
  }
}

std::size_t nonneg(const json &j, const std::string &key) {
  auto v = j.get<std::int64_t>();
  if (v < 0)
    throw ValidationError("config key '" + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> size_list(const json &j, const std::string &key) {
  std::vector<std::size_t> out;
  for (const auto &v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      throw ValidationError("config key '" + key + "' must list non-negative integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

json scalar_from_yaml(const YAML::Node &node) {
  const std::string &s = node.Scalar();
  if (node.Tag() == "!")
    return s;
  if (s.empty() || s == "~" || s == "null" || s == "Null" || s == "NULL")
    return nullptr;
  if (s == "true" || s == "True" || s == "TRUE")
    return true;
  if (s == "false" || s == "False" || s == "FALSE")
    return false;
  {
    std::istringstream in(s);
    long long v;
    if (in >> v && in.eof())
      return v;
  }
  {
    std::istringstream in(s);
    double v;
    if (in >> v && in.eof())
      return v;
  }
  return s;
}

json convert(const YAML::Node &node) {
  switch (node.Type()) {
  case YAML::NodeType::Null:
  case YAML::NodeType::Undefined:
    return nullptr;
  case YAML::NodeType::Scalar:
    return scalar_from_yaml(node);
  case YAML::NodeType::Sequence: {
    json arr = json::array();
    for (const auto &child : node)
      arr.push_back(convert(child));
    return arr;
  }
  case YAML::NodeType::Map: {
    json obj = json::object();
    for (const auto &kv : node)
      obj[kv.first.as<std::string>()] = convert(kv.second);
    return obj;
  }
  }
  return nullptr;
}

} // namespace

json yaml_to_json(const std::string &text) {
  try {
    return convert(YAML::Load(text));
  } catch (const YAML::Exception &e) {
    throw ValidationError(std::string("invalid YAML: ") + e.what());
  }
}

json RunConfig::defaults() {
  const FitGrids grids = FitGrids::defaults();
  return {
    {"paths", {{"train", ""}, {"dev", ""}, {"output", ""}}},
    {"provider",
     {{"seq_len", 150}, {"hop", 150}, {"batch_size", 8}, {"prefetch", 2}, {"shuffle", true}}},
    {"model", json::object()},
    {"optimizer",
     {{"kind", "adam"},
      {"learning_rate", 1e-4},
      {"clip_norm", 5.0},
      {"beta1", 0.9},
      {"beta2", 0.999},
      {"epsilon", 1e-8},
      {"momentum", 0.0}}},
    {"schedule", {{"max_steps", 1000}, {"eval_every", 100}, {"checkpoint_every", 500}}},
    {"loss", {{"kind", "ccc"}, {"pooling", "batch"}}},
    {"evaluation", {{"pooling", "concatenate"}}},
    {"postprocess",
     {{"fit", true},
      {"windows", grids.median_windows},
      {"shifts", grids.shifts},
      {"targets", "train"}}},
    {"seed", 0},
  };
}

RunConfig RunConfig::from_json(const json &j) {
  json tree = defaults();
  merge_checked(tree, j, "");
  RunConfig c;
  try {
    c.paths.train = tree["paths"]["train"].get<std::string>();
    c.paths.dev = tree["paths"]["dev"].get<std::string>();
    c.paths.output = tree["paths"]["output"].get<std::string>();

    const json &p = tree["provider"];
    c.provider.seq_len = nonneg(p["seq_len"], "provider.seq_len");
    c.provider.hop = nonneg(p["hop"], "provider.hop");
    c.provider.batch_size = nonneg(p["batch_size"], "provider.batch_size");
    c.provider.prefetch = nonneg(p["prefetch"], "provider.prefetch");
    c.provider.shuffle = p["shuffle"].get<bool>();

    if (!tree["model"].empty())
      c.model = GraphSpec::from_json(tree["model"]);

    const json &o = tree["optimizer"];
    c.optimizer.kind = o["kind"].get<std::string>();
    c.optimizer.learning_rate = o["learning_rate"].get<double>();
    c.optimizer.clip_norm = o["clip_norm"].get<double>();
    c.optimizer.beta1 = o["beta1"].get<double>();
    c.optimizer.beta2 = o["beta2"].get<double>();
    c.optimizer.epsilon = o["epsilon"].get<double>();
    c.optimizer.momentum = o["momentum"].get<double>();

    const json &s = tree["schedule"];
    c.schedule.max_steps = nonneg(s["max_steps"], "schedule.max_steps");
    c.schedule.eval_every = nonneg(s["eval_every"], "schedule.eval_every");
    c.schedule.checkpoint_every = nonneg(s["checkpoint_every"], "schedule.checkpoint_every");

    c.loss.kind = tree["loss"]["kind"].get<std::string>();
    c.loss.pooling = loss_pooling_from_string(tree["loss"]["pooling"].get<std::string>());
    c.evaluation.pooling =
      session_pooling_from_string(tree["evaluation"]["pooling"].get<std::string>());

    const json &pp = tree["postprocess"];
    c.postprocess.fit = pp["fit"].get<bool>();
    c.postprocess.windows = size_list(pp["windows"], "postprocess.windows");
    c.postprocess.shifts = size_list(pp["shifts"], "postprocess.shifts");
    c.postprocess.targets = pp["targets"].get<std::string>();

    if (!tree["seed"].is_number_integer() || tree["seed"].get<std::int64_t>() < 0)
      throw ValidationError("config key 'seed' must be a non-negative integer");
    c.seed = tree["seed"].get<std::uint64_t>();
  } catch (const json::exception &e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  return {
    {"paths", {{"train", paths.train}, {"dev", paths.dev}, {"output", paths.output}}},
    {"provider",
     {{"seq_len", provider.seq_len},
      {"hop", provider.hop},
      {"batch_size", provider.batch_size},
      {"prefetch", provider.prefetch},
      {"shuffle", provider.shuffle}}},
    {"model", model.nodes.empty() ? json::object() : model.to_json()},
    {"optimizer",
     {{"kind", optimizer.kind},
      {"learning_rate", optimizer.learning_rate},
      {"clip_norm", optimizer.clip_norm},
      {"beta1", optimizer.beta1},
      {"beta2", optimizer.beta2},
      {"epsilon", optimizer.epsilon},
      {"momentum", optimizer.momentum}}},
    {"schedule",
     {{"max_steps", schedule.max_steps},
      {"eval_every", schedule.eval_every},
      {"checkpoint_every", schedule.checkpoint_every}}},
    {"loss", {{"kind", loss.kind}, {"pooling", to_string(loss.pooling)}}},
    {"evaluation", {{"pooling", to_string(evaluation.pooling)}}},
    {"postprocess",
     {{"fit", postprocess.fit},
      {"windows", postprocess.windows},
      {"shifts", postprocess.shifts},
      {"targets", postprocess.targets}}},
    {"seed", seed},
  };
}

void RunConfig::validate() const {
  auto fail = [](const std::string &m) { throw ValidationError(m); };
  if (provider.seq_len < 1)
    fail("provider.seq_len must be >= 1");
  if (provider.hop < 1)
    fail("provider.hop must be >= 1");
  if (provider.batch_size < 1)
    fail("provider.batch_size must be >= 1");
  if (optimizer.kind != "adam" && optimizer.kind != "sgd")
    fail("optimizer.kind must be 'adam' or 'sgd', got '" + optimizer.kind + "'");
  if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate))
    fail("optimizer.learning_rate must be finite and >= 0");
  if (!(optimizer.clip_norm >= 0.0))
    fail("optimizer.clip_norm must be >= 0");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
    fail("optimizer betas must lie in [0, 1)");
  if (!(optimizer.epsilon > 0.0))
    fail("optimizer.epsilon must be > 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0))
    fail("optimizer.momentum must lie in [0, 1)");
  if (loss.kind != "ccc" && loss.kind != "cross_entropy")
    fail("loss.kind must be 'ccc' or 'cross_entropy', got '" + loss.kind + "'");
  if (postprocess.targets != "train" && postprocess.targets != "dev")
    fail("postprocess.targets must be 'train' or 'dev'");
  if (postprocess.fit && (postprocess.windows.empty() || postprocess.shifts.empty()))
    fail("postprocess grids must not be empty");
  for (auto w : postprocess.windows)
    if (w % 2 == 0)
      fail("postprocess.windows must be odd, got " + std::to_string(w));
}

json RunConfig::load_tree(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") {
    try {
      return json::parse(ss.str());
    } catch (const json::exception &e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
  }
  return yaml_to_json(ss.str());
}

RunConfig RunConfig::load(const std::filesystem::path &path) {
  return from_json(load_tree(path));
}

void apply_override(json &tree, const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception &) {
    value = text;
  }

  const json schema = RunConfig::defaults();
  const json *sch = &schema;
  json *node = &tree;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');)
    parts.push_back(part);
  bool in_model = false;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string &part = parts[i];
    const bool last = i + 1 == parts.size();
    if (part.empty())
      throw ValidationError("override key '" + key + "' has an empty segment");
    const bool numeric = part.find_first_not_of("0123456789") == std::string::npos;
    if (node->is_null())
      *node = json::object();
    if (node->is_array()) {
      if (!numeric)
        throw ValidationError("override key '" + key + "': '" + part + "' is not an index");
      const auto idx = std::stoul(part);
      if (idx >= node->size())
        throw ValidationError("override key '" + key + "': index " + part + " out of range");
      node = &(*node)[idx];
      sch = (sch && sch->is_array() && idx < sch->size()) ? &(*sch)[idx] : nullptr;
      continue;
    }
    if (!in_model) {
      if (!sch || !sch->is_object() || !sch->contains(part))
        throw ValidationError("unknown config key '" + key + "'");
      sch = &(*sch)[part];
      if (i == 0 && part == "model")
        in_model = true;
    } else {
      sch = nullptr;
      if (!last && !node->contains(part))
        throw ValidationError("override key '" + key + "' does not exist in the model");
    }
    node = &(*node)[part];
  }
  const json &reference = node->is_null() && sch ? *sch : *node;
  if (!reference.is_null() && !compatible(reference, value))
    throw ValidationError("override '" + key + "' expects " + type_name(reference) + ", got " +
                          type_name(value));
  *node = value;
}

std::filesystem::path resolve_output_dir(const RunConfig &config) {
  if (!config.paths.output.empty())
    return config.paths.output;
  if (const char *env = std::getenv("E2Y_OUT"); env && *env)
    return env;
  return "e2y_out";
}

} // namespace e2y
