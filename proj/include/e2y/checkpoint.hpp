// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Optimizers and the on-disk checkpoint archive.
 *
 * Archive layout (a directory):
 *   manifest.json   format, version, step, fingerprint, rng_state, config,
 *                   tensor table {name, shape, dtype, offset}, optimizer
 *   tensors.bin     parameter values, little-endian float64, manifest order
 *   optimizer.bin   optimizer slots, same encoding
 */
#pragma once

#include <e2y/tensor.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace e2y {

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  Matrix value;
};

struct OptimizerSettings {
  std::string kind = "adam"; ///< adam | sgd
  double learning_rate = 1e-4;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;
};

/// Adam or SGD (with optional momentum) over named parameters, with
/// global-norm gradient clipping.
class Optimizer {
public:
  explicit Optimizer(OptimizerSettings settings);

  /// Clips and applies the gradients. Returns the global gradient norm
  /// before clipping.
  double step(const std::vector<Parameter *> &params);

  std::uint64_t iterations() const { return t_; }
  const OptimizerSettings &settings() const { return settings_; }

  std::vector<NamedTensor> export_state() const;
  void import_state(std::uint64_t iterations, const std::vector<NamedTensor> &state);

private:
  OptimizerSettings settings_;
  std::uint64_t t_ = 0;
  std::map<std::string, Matrix> first_;
  std::map<std::string, Matrix> second_;
};

/// Global L2 norm over every parameter gradient.
double global_grad_norm(const std::vector<Parameter *> &params);

struct Checkpoint {
  std::uint64_t step = 0;
  std::string fingerprint;
  std::string rng_state;
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedTensor> parameters;
  std::string optimizer_kind = "adam";
  std::uint64_t optimizer_iterations = 0;
  std::vector<NamedTensor> optimizer_state;
};

/// Writes the archive, replacing any previous contents of the three files.
void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &dir);
/// Throws IoError / CorruptionError on unreadable or inconsistent archives.
Checkpoint load_checkpoint(const std::filesystem::path &dir);

inline constexpr char kCheckpointManifest[] = "manifest.json";
inline constexpr char kCheckpointTensors[] = "tensors.bin";
inline constexpr char kCheckpointOptimizer[] = "optimizer.bin";

} // namespace e2y
