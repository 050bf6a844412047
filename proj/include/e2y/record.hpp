// SPDX-License-Identifier: Apache-2.0
/**
 * @file   record.hpp
 * @brief  Sequence records and the `.e2y` container format.
 *
 * Layout (all integers little-endian):
 *
 *   "E2Y1" | u16 version | u32 header_len | header JSON (UTF-8)
 *   | per step: u32 step_index, label_dim x f64,
 *               per modality (header order): u32 payload_len, payload
 *   | u32 CRC32 over every byte after the magic
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace e2y {

enum class ModalityKind { audio, video, numeric };
enum class DType { float32, uint8 };

std::string to_string(ModalityKind kind);
std::string to_string(DType dtype);
ModalityKind modality_kind_from_string(const std::string &s);
DType dtype_from_string(const std::string &s);
std::size_t dtype_size(DType dtype);

struct ModalityDescriptor {
  std::string name;
  ModalityKind kind = ModalityKind::numeric;
  double sample_rate = 1.0;
  std::vector<std::size_t> frame_shape;
  DType dtype = DType::float32;

  /// Number of scalar values in one timestep's chunk.
  std::size_t frame_size() const;
  std::size_t frame_bytes() const { return frame_size() * dtype_size(dtype); }

  bool operator==(const ModalityDescriptor &) const = default;
};

/// Raw bytes for all steps of one modality, `num_steps * frame_bytes` long.
struct FrameBuffer {
  std::vector<std::uint8_t> bytes;

  std::span<const float> as_float32() const;
  std::span<float> as_float32();
  bool operator==(const FrameBuffer &) const = default;
};

struct SequenceRecord {
  std::string subject_id;
  double step_period = 0.04;
  std::size_t num_steps = 0;
  std::vector<ModalityDescriptor> modalities;
  std::vector<FrameBuffer> frames; ///< parallel to modalities
  std::vector<std::string> label_names;
  std::vector<double> labels; ///< num_steps x label_dim, row-major

  std::size_t label_dim() const { return label_names.size(); }
  double label(std::size_t step, std::size_t dim) const {
    return labels[step * label_dim() + dim];
  }
  /// Bytes of one modality's chunk at `step`.
  std::span<const std::uint8_t> frame(std::size_t modality,
                                      std::size_t step) const;
  /// Index of the modality with `name`, if present.
  std::optional<std::size_t> find_modality(const std::string &name) const;

  bool operator==(const SequenceRecord &) const = default;
};

/// Append a modality whose frames are float32 values (num_steps x frame_size).
void add_float_modality(SequenceRecord &record, ModalityDescriptor desc,
                        std::span<const float> values);
/// Append a modality whose frames are uint8 values.
void add_byte_modality(SequenceRecord &record, ModalityDescriptor desc,
                       std::span<const std::uint8_t> values);

/// Throws ValidationError naming the record and field on the first violation.
void validate_descriptor(const ModalityDescriptor &desc, double step_period);
void validate_record(const SequenceRecord &record);

std::vector<std::uint8_t> encode_record(const SequenceRecord &record);
SequenceRecord decode_record(std::span<const std::uint8_t> bytes);

struct WrittenFile {
  std::filesystem::path path;
  std::size_t bytes = 0;
  std::uint32_t crc32 = 0;
};

struct WriteReport {
  std::vector<WrittenFile> files;
  std::size_t total_bytes() const;
};

/// Writes `<dir>/<subject_id>.e2y` for each record. Creates `dir` if needed.
WriteReport write_records(std::span<const SequenceRecord> records,
                          const std::filesystem::path &dir);

/// Header-level metadata decoded without touching frame payloads.
struct RecordHeader {
  std::uint16_t version = 0;
  std::string subject_id;
  double step_period = 0.0;
  std::size_t num_steps = 0;
  std::vector<std::string> label_names;
  std::vector<ModalityDescriptor> modalities;
  std::size_t payload_offset = 0; ///< first byte of step 0
};

/// Lazy reader over one `.e2y` file: opening parses only the header; `load`
/// decodes and checks the full payload. Each instance owns its own cursor.
class RecordFile {
public:
  explicit RecordFile(std::filesystem::path path);

  const RecordHeader &header() const { return header_; }
  const std::filesystem::path &path() const { return path_; }
  std::uintmax_t file_size() const { return file_size_; }
  SequenceRecord load() const;

private:
  std::filesystem::path path_;
  RecordHeader header_;
  std::uintmax_t file_size_ = 0;
};

/// `path` may be a single `.e2y` file or a directory of them (sorted by name).
std::vector<std::filesystem::path> list_record_files(const std::filesystem::path &path);

/// Streams records one at a time in stored order.
class RecordStream {
public:
  explicit RecordStream(const std::filesystem::path &path);
  std::optional<SequenceRecord> next();
  std::size_t size() const { return files_.size(); }

private:
  std::vector<std::filesystem::path> files_;
  std::size_t cursor_ = 0;
};

/// Reads every record eagerly.
std::vector<SequenceRecord> read_records(const std::filesystem::path &path);

inline constexpr std::uint16_t kRecordFormatVersion = 1;
inline constexpr char kRecordExtension[] = ".e2y";

} // namespace e2y
