// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ingestion.hpp
 * @brief  Raw-source decoders and label alignment (record generation).
 */
#pragma once

#include <e2y/record.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace e2y {

/// Sample-major signal: `samples[i * channels + c]`.
struct RawSignal {
  std::vector<float> samples;
  std::size_t channels = 1;
  double rate = 0.0;
  std::vector<std::string> channel_names;

  std::size_t num_frames() const {
    return channels == 0 ? 0 : samples.size() / channels;
  }
};

struct ImageFrame {
  double timestamp = 0.0; ///< seconds
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels; ///< HWC
};

struct LabelTable {
  std::vector<std::string> names;
  std::vector<double> times;
  std::vector<double> values; ///< rows x names.size()

  std::size_t rows() const { return times.size(); }
};

/// PCM WAV (8/16/32-bit integer, 32-bit float) -> mono float samples in [-1, 1].
RawSignal decode_audio(const std::filesystem::path &path);

/// CSV with a leading time column. `expected_channels` of 0 accepts any count.
RawSignal decode_numeric_csv(const std::filesystem::path &path,
                             std::size_t expected_channels = 0);

/// Directory of `<milliseconds>.png` files, sorted by timestamp.
std::vector<ImageFrame> decode_video_frames(const std::filesystem::path &dir);

/// Label CSV: `time,<label_1>,...`. Rows must be evenly spaced.
LabelTable read_label_csv(const std::filesystem::path &path);

/// Relative jitter tolerated between consecutive timestamps.
inline constexpr double kSpacingTolerance = 0.01;

struct AlignmentInputs {
  std::string subject_id;
  std::optional<RawSignal> audio;
  std::optional<std::vector<ImageFrame>> video;
  std::optional<RawSignal> physio;
};

/// Chops every signal onto the label timeline and builds a validated record.
SequenceRecord align_to_labels(const AlignmentInputs &inputs,
                               const LabelTable &labels, double step_period);

struct ManifestRow {
  std::string subject_id;
  std::optional<std::filesystem::path> audio, video, physio;
  std::filesystem::path labels;
};

/// CSV with header `subject_id,audio,video,physio,labels`. Relative paths are
/// resolved against the manifest's directory.
std::vector<ManifestRow> read_manifest(const std::filesystem::path &path);

/// Decodes and aligns one manifest row. `label_names`, when non-empty, must
/// match the label CSV header.
SequenceRecord generate_record(const ManifestRow &row, double step_period,
                               const std::vector<std::string> &label_names = {});

/// Writes a PNG (used by tests and synthetic-data tools).
void write_png(const std::filesystem::path &path, const ImageFrame &frame);

/// Writes 16-bit PCM WAV.
void write_wav_pcm16(const std::filesystem::path &path,
                     const std::vector<std::int16_t> &interleaved,
                     std::size_t channels, std::uint32_t rate);

} // namespace e2y
