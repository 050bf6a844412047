// SPDX-License-Identifier: Apache-2.0
#include <e2y/error.hpp>
#include <e2y/provider.hpp>

#include <numeric>

namespace e2y {

std::vector<WindowView> make_windows(std::shared_ptr<const SequenceRecord> record,
                                     std::size_t seq_len, std::size_t hop) {
  if (seq_len < 1 || hop < 1)
    throw ParameterError("seq_len and hop must be >= 1");
  std::vector<WindowView> out;
  const std::size_t n = record->num_steps;
  for (std::size_t start = 0; start < n; start += hop) {
    out.push_back({record, start, std::min(seq_len, n - start)});
    if (start + seq_len >= n)
      break;
  }
  return out;
}

const Matrix *Batch::find(const std::string &modality) const {
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i].name == modality)
      return &frames[i];
  return nullptr;
}

Batch assemble_batch(std::span<const WindowView> windows, std::size_t seq_len) {
  if (windows.empty())
    throw ValidationError("cannot assemble an empty batch");
  const auto &first = *windows[0].record;
  for (const auto &w : windows) {
    const auto &r = *w.record;
    if (r.modalities != first.modalities)
      throw ValidationError("heterogeneous modality shapes: record '" + r.subject_id +
                            "' does not match record '" + first.subject_id + "'");
    if (r.label_names != first.label_names)
      throw ValidationError("heterogeneous labels: record '" + r.subject_id +
                            "' does not match record '" + first.subject_id + "'");
    if (w.length > seq_len || w.start + w.length > r.num_steps)
      throw ValidationError("window exceeds seq_len or record bounds");
  }
  Batch b;
  b.batch_size = windows.size();
  b.seq_len = seq_len;
  b.modalities = first.modalities;
  const auto rows = static_cast<Eigen::Index>(b.batch_size * seq_len);
  const auto label_dim = first.label_dim();
  b.labels = Matrix::Zero(rows, static_cast<Eigen::Index>(label_dim));
  b.mask = StepMask{b.batch_size, seq_len, std::vector<std::uint8_t>(b.batch_size * seq_len, 0)};
  for (const auto &m : b.modalities)
    b.frames.push_back(Matrix::Zero(rows, static_cast<Eigen::Index>(m.frame_size())));

  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto &w = windows[i];
    const auto &r = *w.record;
    b.provenance.emplace_back(r.subject_id, w.start);
    b.lengths.push_back(w.length);
    for (std::size_t t = 0; t < w.length; ++t) {
      const std::size_t step = w.start + t;
      const auto row = static_cast<Eigen::Index>(i * seq_len + t);
      b.mask.values[static_cast<std::size_t>(row)] = 1;
      for (std::size_t k = 0; k < label_dim; ++k)
        b.labels(row, static_cast<Eigen::Index>(k)) = r.label(step, k);
      for (std::size_t m = 0; m < r.modalities.size(); ++m) {
        const auto n = r.modalities[m].frame_size();
        auto dst = b.frames[m].row(row);
        if (r.modalities[m].dtype == DType::float32) {
          auto src = r.frames[m].as_float32().subspan(step * n, n);
          for (std::size_t j = 0; j < n; ++j)
            dst(static_cast<Eigen::Index>(j)) = src[j];
        } else {
          auto src = std::span<const std::uint8_t>(r.frames[m].bytes).subspan(step * n, n);
          for (std::size_t j = 0; j < n; ++j)
            dst(static_cast<Eigen::Index>(j)) = src[j];
        }
      }
    }
  }
  return b;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    auto j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

BatchStream::BatchStream(std::vector<WindowView> windows, BatchOptions options)
  : windows_(std::move(windows)), options_(options) {
  if (options_.batch_size < 1 || options_.seq_len < 1)
    throw ParameterError("batch_size and seq_len must be >= 1");
  std::vector<std::size_t> order(windows_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (options_.shuffle_seed)
    order = seeded_permutation(windows_.size(), *options_.shuffle_seed);
  for (std::size_t i = 0; i < order.size(); i += options_.batch_size)
    groups_.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(
                                           std::min(order.size(), i + options_.batch_size)));
  // Fail fast on heterogeneous inputs before any worker starts.
  for (const auto &w : windows_)
    if (w.record->modalities != windows_[0].record->modalities ||
        w.record->label_names != windows_[0].record->label_names)
      throw ValidationError("heterogeneous modality shapes: record '" +
                            w.record->subject_id + "' does not match record '" +
                            windows_[0].record->subject_id + "'");
  if (options_.prefetch > 0 && !groups_.empty())
    worker_ = std::thread([this] { worker_loop(); });
}

BatchStream::~BatchStream() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable())
    worker_.join();
}

void BatchStream::worker_loop() {
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || ready_.size() < options_.prefetch; });
      if (stop_)
        return;
    }
    std::vector<WindowView> ws;
    for (auto idx : groups_[g])
      ws.push_back(windows_[idx]);
    try {
      Batch b = assemble_batch(ws, options_.seq_len);
      std::lock_guard lock(mu_);
      ready_.emplace_back(g, std::move(b));
    } catch (...) {
      std::lock_guard lock(mu_);
      worker_error_ = std::current_exception();
      cv_.notify_all();
      return;
    }
    cv_.notify_all();
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= groups_.size())
    return std::nullopt;
  if (options_.prefetch == 0) {
    std::vector<WindowView> ws;
    for (auto idx : groups_[cursor_])
      ws.push_back(windows_[idx]);
    ++cursor_;
    return assemble_batch(ws, options_.seq_len);
  }
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] {
    return worker_error_ || (!ready_.empty() && ready_.front().first == cursor_);
  });
  if (ready_.empty() || ready_.front().first != cursor_)
    std::rethrow_exception(worker_error_);
  Batch b = std::move(ready_.front().second);
  ready_.pop_front();
  ++cursor_;
  lock.unlock();
  cv_.notify_all();
  return b;
}

std::vector<Batch> batch_windows(std::vector<WindowView> windows, BatchOptions options) {
  BatchStream stream(std::move(windows), options);
  std::vector<Batch> out;
  while (auto b = stream.next())
    out.push_back(std::move(*b));
  return out;
}

} // namespace e2y
