// SPDX-License-Identifier: Apache-2.0
#include <e2y/checkpoint.hpp>
#include <e2y/error.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace e2y {

using nlohmann::json;

Optimizer::Optimizer(OptimizerSettings settings) : settings_(std::move(settings)) {
  if (settings_.kind != "adam" && settings_.kind != "sgd")
    throw ParameterError("unknown optimizer '" + settings_.kind + "'");
}

double global_grad_norm(const std::vector<Parameter *> &params) {
  double acc = 0.0;
  for (const auto *p : params)
    acc += p->grad.squaredNorm();
  return std::sqrt(acc);
}

double Optimizer::step(const std::vector<Parameter *> &params) {
  const double norm = global_grad_norm(params);
  double factor = 1.0;
  if (settings_.clip_norm > 0.0 && norm > settings_.clip_norm)
    factor = settings_.clip_norm / norm;
  ++t_;
  const double lr = settings_.learning_rate;
  if (settings_.kind == "adam") {
    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto *p : params) {
      auto &m = first_[p->name];
      auto &v = second_[p->name];
      if (m.size() == 0) {
        m = Matrix::Zero(p->value.rows(), p->value.cols());
        v = Matrix::Zero(p->value.rows(), p->value.cols());
      }
      const Matrix g = p->grad * factor;
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
      p->value.array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + settings_.epsilon);
    }
  } else {
    for (auto *p : params) {
      const Matrix g = p->grad * factor;
      if (settings_.momentum > 0.0) {
        auto &vel = first_[p->name];
        if (vel.size() == 0)
          vel = Matrix::Zero(p->value.rows(), p->value.cols());
        vel = settings_.momentum * vel + g;
        p->value -= lr * vel;
      } else {
        p->value -= lr * g;
      }
    }
  }
  return norm;
}

std::vector<NamedTensor> Optimizer::export_state() const {
  std::vector<NamedTensor> out;
  auto emit = [&](const std::map<std::string, Matrix> &slots, const char *suffix) {
    for (const auto &[name, m] : slots)
      out.push_back({name + suffix,
                     {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                     m});
  };
  emit(first_, settings_.kind == "adam" ? "#m" : "#velocity");
  emit(second_, "#v");
  return out;
}

void Optimizer::import_state(std::uint64_t iterations, const std::vector<NamedTensor> &state) {
  t_ = iterations;
  first_.clear();
  second_.clear();
  for (const auto &s : state) {
    const auto hash = s.name.rfind('#');
    if (hash == std::string::npos)
      throw CorruptionError("optimizer slot '" + s.name + "' has no suffix", 0);
    const std::string base = s.name.substr(0, hash), slot = s.name.substr(hash + 1);
    if (slot == "m" || slot == "velocity")
      first_[base] = s.value;
    else if (slot == "v")
      second_[base] = s.value;
    else
      throw CorruptionError("unknown optimizer slot '" + s.name + "'", 0);
  }
}

namespace {

json tensor_table(const std::vector<NamedTensor> &tensors) {
  json table = json::array();
  std::size_t offset = 0;
  for (const auto &t : tensors) {
    table.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "float64"}, {"offset", offset}});
    offset += static_cast<std::size_t>(t.value.size()) * sizeof(double);
  }
  return table;
}

void write_blob(const std::filesystem::path &path, const std::vector<NamedTensor> &tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + path.string());
  for (const auto &t : tensors)
    out.write(reinterpret_cast<const char *>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  if (!out)
    throw IoError("failed writing " + path.string());
}

std::vector<char> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<NamedTensor> read_blob(const std::filesystem::path &path, const json &table) {
  const auto bytes = read_file(path);
  std::vector<NamedTensor> out;
  std::size_t expected = 0;
  for (const auto &entry : table) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (entry.at("dtype").get<std::string>() != "float64")
      throw UnsupportedFormatError("tensor '" + t.name + "' has unsupported dtype");
    const auto offset = entry.at("offset").get<std::size_t>();
    std::size_t count = 1;
    for (auto d : t.shape)
      count *= d;
    if (offset != expected || offset + count * sizeof(double) > bytes.size())
      throw CorruptionError(path.string() + ": tensor '" + t.name + "' out of bounds", offset);
    const std::size_t rows = t.shape.size() < 2 ? 1 : t.shape.front();
    const std::size_t cols = rows == 0 ? 0 : count / rows;
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::memcpy(t.value.data(), bytes.data() + offset, count * sizeof(double));
    expected = offset + count * sizeof(double);
    out.push_back(std::move(t));
  }
  if (expected != bytes.size())
    throw CorruptionError(path.string() + ": unexpected trailing bytes", expected);
  return out;
}

} // namespace

void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json manifest = {
    {"format", "e2y-checkpoint"},
    {"version", 1},
    {"step", ck.step},
    {"fingerprint", ck.fingerprint},
    {"rng_state", ck.rng_state},
    {"config", ck.config},
    {"tensors", tensor_table(ck.parameters)},
    {"optimizer",
     {{"kind", ck.optimizer_kind},
      {"iterations", ck.optimizer_iterations},
      {"tensors", tensor_table(ck.optimizer_state)}}},
  };
  write_blob(dir / kCheckpointTensors, ck.parameters);
  write_blob(dir / kCheckpointOptimizer, ck.optimizer_state);
  std::ofstream out(dir / kCheckpointManifest, std::ios::trunc);
  if (!out)
    throw IoError("cannot write " + (dir / kCheckpointManifest).string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("checkpoint directory not found: " + dir.string());
  const auto text = read_file(dir / kCheckpointManifest);
  Checkpoint ck;
  try {
    const json m = json::parse(text.begin(), text.end());
    if (m.at("format").get<std::string>() != "e2y-checkpoint")
      throw UnsupportedFormatError(dir.string() + " is not a checkpoint");
    if (m.at("version").get<int>() != 1)
      throw UnsupportedFormatError("unsupported checkpoint version " + m.at("version").dump());
    ck.step = m.at("step").get<std::uint64_t>();
    ck.fingerprint = m.at("fingerprint").get<std::string>();
    ck.rng_state = m.at("rng_state").get<std::string>();
    ck.config = m.at("config");
    ck.parameters = read_blob(dir / kCheckpointTensors, m.at("tensors"));
    const json &o = m.at("optimizer");
    ck.optimizer_kind = o.at("kind").get<std::string>();
    ck.optimizer_iterations = o.at("iterations").get<std::uint64_t>();
    ck.optimizer_state = read_blob(dir / kCheckpointOptimizer, o.at("tensors"));
  } catch (const json::exception &e) {
    throw CorruptionError(dir.string() + ": malformed manifest: " + e.what(), 0);
  }
  return ck;
}

} // namespace e2y
