// SPDX-License-Identifier: Apache-2.0
/**
 * @file   provider.hpp
 * @brief  Windowing of records into fixed-length subsequences and assembly of
 *         zero-padded, masked mini-batches.
 */
#pragma once

#include <e2y/record.hpp>
#include <e2y/tensor.hpp>

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

namespace e2y {

/// Steps [start, start + length) of one record.
struct WindowView {
  std::shared_ptr<const SequenceRecord> record;
  std::size_t start = 0;
  std::size_t length = 0;
};

/// Windows start at 0, hop, 2*hop, ... while start < num_steps; the last may
/// be shorter than `seq_len`.
std::vector<WindowView> make_windows(std::shared_ptr<const SequenceRecord> record,
                                     std::size_t seq_len, std::size_t hop);

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<ModalityDescriptor> modalities;
  std::vector<Matrix> frames; ///< per modality: (batch*seq) x frame_size
  Matrix labels;              ///< (batch*seq) x label_dim
  StepMask mask;
  std::vector<std::pair<std::string, std::size_t>> provenance; ///< (subject, start)
  std::vector<std::size_t> lengths;

  const Matrix *find(const std::string &modality) const;
};

/// Builds one padded batch. All windows must share modality descriptors and
/// label names (ValidationError otherwise).
Batch assemble_batch(std::span<const WindowView> windows, std::size_t seq_len);

struct BatchOptions {
  std::size_t seq_len = 150;
  std::size_t batch_size = 8;
  std::optional<std::uint64_t> shuffle_seed; ///< none keeps window order
  std::size_t prefetch = 2;                  ///< 0 assembles on the caller's thread
};

/// Ordered stream of batches over a window list. With prefetch > 0 a
/// background worker assembles up to `prefetch` batches ahead; the emitted
/// order is fixed by the seed alone.
class BatchStream {
public:
  BatchStream(std::vector<WindowView> windows, BatchOptions options);
  ~BatchStream();
  BatchStream(const BatchStream &) = delete;
  BatchStream &operator=(const BatchStream &) = delete;

  std::optional<Batch> next();
  std::size_t num_batches() const { return groups_.size(); }

private:
  void worker_loop();

  std::vector<WindowView> windows_;
  BatchOptions options_;
  std::vector<std::vector<std::size_t>> groups_;
  std::size_t cursor_ = 0;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::size_t, Batch>> ready_;
  std::exception_ptr worker_error_;
  bool stop_ = false;
  std::thread worker_;
};

/// Convenience: drains a BatchStream.
std::vector<Batch> batch_windows(std::vector<WindowView> windows, BatchOptions options);

/// Fisher-Yates permutation of [0, n) driven by `seed`.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

} // namespace e2y
