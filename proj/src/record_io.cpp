// SPDX-License-Identifier: Apache-2.0
/**
 * @file   record_io.cpp
 * @brief  Encoder/decoder for the `.e2y` record container.
 */
#include <e2y/error.hpp>
#include <e2y/record.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>
#include <zlib.h>

namespace e2y {

static_assert(std::endian::native == std::endian::little,
              "frame payloads are stored in host order; big-endian hosts are "
              "not supported");

namespace {

constexpr char kMagic[4] = {'E', '2', 'Y', '1'};
constexpr std::size_t kPreambleBytes = 4 + 2 + 4;

std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded slices.
  constexpr std::size_t kSlice = 1u << 30;
  for (std::size_t pos = 0; pos < data.size(); pos += kSlice) {
    auto n = std::min(kSlice, data.size() - pos);
    crc = ::crc32(crc, data.data() + pos, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

class ByteWriter {
public:
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
      out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void raw(std::span<const std::uint8_t> bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }
  std::vector<std::uint8_t> &buffer() { return out_; }

private:
  std::vector<std::uint8_t> out_;
};

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

double read_f64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

nlohmann::json header_json(const SequenceRecord &r) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto &m : r.modalities) {
    mods.push_back({{"name", m.name},
                    {"kind", to_string(m.kind)},
                    {"sample_rate", m.sample_rate},
                    {"frame_shape", m.frame_shape},
                    {"dtype", to_string(m.dtype)}});
  }
  return {{"subject_id", r.subject_id},
          {"step_period", r.step_period},
          {"num_steps", r.num_steps},
          {"label_names", r.label_names},
          {"modalities", mods}};
}

RecordHeader parse_header(std::span<const std::uint8_t> bytes,
                          std::size_t available) {
  if (available < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw UnsupportedFormatError("not an e2y record: bad magic");
  if (available < kPreambleBytes)
    throw CorruptionError("record truncated inside preamble", available);
  RecordHeader h;
  h.version = read_u16(bytes, 4);
  if (h.version != kRecordFormatVersion)
    throw UnsupportedFormatError("unsupported e2y format version " +
                                 std::to_string(h.version));
  std::size_t header_len = read_u32(bytes, 6);
  if (header_len > available - kPreambleBytes)
    throw CorruptionError("header length exceeds file size", 6);
  h.payload_offset = kPreambleBytes + header_len;

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + kPreambleBytes,
                              bytes.begin() + h.payload_offset);
    h.subject_id = j.at("subject_id").get<std::string>();
    h.step_period = j.at("step_period").get<double>();
    h.num_steps = j.at("num_steps").get<std::size_t>();
    h.label_names = j.at("label_names").get<std::vector<std::string>>();
    for (const auto &m : j.at("modalities")) {
      ModalityDescriptor d;
      d.name = m.at("name").get<std::string>();
      d.kind = modality_kind_from_string(m.at("kind").get<std::string>());
      d.sample_rate = m.at("sample_rate").get<double>();
      d.frame_shape = m.at("frame_shape").get<std::vector<std::size_t>>();
      d.dtype = dtype_from_string(m.at("dtype").get<std::string>());
      h.modalities.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception &e) {
    throw CorruptionError(std::string("malformed record header: ") + e.what(),
                          kPreambleBytes);
  } catch (const ValidationError &e) {
    throw CorruptionError(std::string("malformed record header: ") + e.what(),
                          kPreambleBytes);
  }
  return h;
}

std::string field_error(const SequenceRecord &r, const std::string &field,
                        const std::string &msg) {
  return "record '" + r.subject_id + "': field '" + field + "' " + msg;
}

} // namespace

std::string to_string(ModalityKind kind) {
  switch (kind) {
  case ModalityKind::audio:
    return "audio";
  case ModalityKind::video:
    return "video";
  case ModalityKind::numeric:
    return "numeric";
  }
  return "numeric";
}

std::string to_string(DType dtype) {
  return dtype == DType::float32 ? "float32" : "uint8";
}

ModalityKind modality_kind_from_string(const std::string &s) {
  if (s == "audio")
    return ModalityKind::audio;
  if (s == "video")
    return ModalityKind::video;
  if (s == "numeric")
    return ModalityKind::numeric;
  throw ValidationError("unknown modality kind '" + s + "'");
}

DType dtype_from_string(const std::string &s) {
  if (s == "float32")
    return DType::float32;
  if (s == "uint8")
    return DType::uint8;
  throw ValidationError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType dtype) { return dtype == DType::float32 ? 4 : 1; }

std::size_t ModalityDescriptor::frame_size() const {
  std::size_t n = 1;
  for (auto d : frame_shape)
    n *= d;
  return frame_shape.empty() ? 0 : n;
}

std::span<const float> FrameBuffer::as_float32() const {
  return {reinterpret_cast<const float *>(bytes.data()), bytes.size() / 4};
}

std::span<float> FrameBuffer::as_float32() {
  return {reinterpret_cast<float *>(bytes.data()), bytes.size() / 4};
}

std::span<const std::uint8_t> SequenceRecord::frame(std::size_t modality,
                                                    std::size_t step) const {
  auto n = modalities[modality].frame_bytes();
  return std::span<const std::uint8_t>(frames[modality].bytes)
    .subspan(step * n, n);
}

std::optional<std::size_t>
SequenceRecord::find_modality(const std::string &name) const {
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i].name == name)
      return i;
  return std::nullopt;
}

void add_float_modality(SequenceRecord &record, ModalityDescriptor desc,
                        std::span<const float> values) {
  FrameBuffer buf;
  buf.bytes.resize(values.size_bytes());
  std::memcpy(buf.bytes.data(), values.data(), values.size_bytes());
  desc.dtype = DType::float32;
  record.modalities.push_back(std::move(desc));
  record.frames.push_back(std::move(buf));
}

void add_byte_modality(SequenceRecord &record, ModalityDescriptor desc,
                       std::span<const std::uint8_t> values) {
  FrameBuffer buf;
  buf.bytes.assign(values.begin(), values.end());
  desc.dtype = DType::uint8;
  record.modalities.push_back(std::move(desc));
  record.frames.push_back(std::move(buf));
}

void validate_descriptor(const ModalityDescriptor &d, double step_period) {
  auto fail = [&](const std::string &msg) {
    throw ValidationError("modality '" + d.name + "': " + msg);
  };
  if (d.name.empty())
    throw ValidationError("modality with empty name");
  if (!(d.sample_rate > 0.0) || !std::isfinite(d.sample_rate))
    fail("sample_rate must be positive");
  if (d.frame_shape.empty())
    fail("frame_shape must not be empty");
  for (auto dim : d.frame_shape)
    if (dim < 1)
      fail("frame_shape dimensions must be >= 1");
  switch (d.kind) {
  case ModalityKind::audio: {
    if (d.dtype != DType::float32)
      fail("audio frames must be float32");
    if (d.frame_shape.size() != 1)
      fail("audio frame_shape must be 1-D");
    double expected = d.sample_rate * step_period;
    double nearest = std::round(expected);
    if (std::abs(expected - nearest) > 1e-9 * std::max(1.0, expected))
      fail("sample_rate x step_period = " + std::to_string(expected) +
           " is not an integer sample count");
    if (static_cast<double>(d.frame_shape[0]) != nearest)
      fail("frame_shape [" + std::to_string(d.frame_shape[0]) +
           "] does not match sample_rate x step_period = " +
           std::to_string(static_cast<long long>(nearest)));
    break;
  }
  case ModalityKind::video:
    if (d.dtype != DType::uint8)
      fail("video frames must be uint8");
    if (d.frame_shape.size() != 3)
      fail("video frame_shape must be [height, width, channels]");
    break;
  case ModalityKind::numeric:
    break;
  }
}

void validate_record(const SequenceRecord &r) {
  if (r.subject_id.empty())
    throw ValidationError("record with empty subject_id");
  if (r.subject_id.find_first_of("/\\") != std::string::npos ||
      r.subject_id == "." || r.subject_id == "..")
    throw ValidationError(field_error(r, "subject_id", "is not a valid file stem"));
  if (!(r.step_period > 0.0) || !std::isfinite(r.step_period))
    throw ValidationError(field_error(r, "step_period", "must be positive"));
  if (r.num_steps < 1)
    throw ValidationError(field_error(r, "num_steps", "must be >= 1"));
  if (r.label_names.empty())
    throw ValidationError(field_error(r, "label_names", "must not be empty"));
  if (r.labels.size() != r.num_steps * r.label_dim())
    throw ValidationError(field_error(
      r, "labels",
      "has " + std::to_string(r.labels.size()) + " values, expected " +
        std::to_string(r.num_steps * r.label_dim())));
  for (auto v : r.labels)
    if (!std::isfinite(v))
      throw ValidationError(field_error(r, "labels", "contains a non-finite value"));
  if (r.frames.size() != r.modalities.size())
    throw ValidationError(field_error(r, "frames",
                                      "count differs from modality count"));
  std::set<std::string> names;
  for (std::size_t m = 0; m < r.modalities.size(); ++m) {
    const auto &d = r.modalities[m];
    try {
      validate_descriptor(d, r.step_period);
    } catch (const ValidationError &e) {
      throw ValidationError(field_error(r, "modalities", e.what()));
    }
    if (!names.insert(d.name).second)
      throw ValidationError(field_error(r, "modalities",
                                        "duplicate name '" + d.name + "'"));
    if (r.frames[m].bytes.size() != r.num_steps * d.frame_bytes())
      throw ValidationError(field_error(
        r, "frames[" + d.name + "]",
        "holds " + std::to_string(r.frames[m].bytes.size()) +
          " bytes, expected " + std::to_string(r.num_steps * d.frame_bytes())));
  }
}

std::vector<std::uint8_t> encode_record(const SequenceRecord &r) {
  validate_record(r);
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t *>(kMagic), 4});
  w.u16(kRecordFormatVersion);
  auto header = header_json(r).dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.raw({reinterpret_cast<const std::uint8_t *>(header.data()), header.size()});
  for (std::size_t s = 0; s < r.num_steps; ++s) {
    w.u32(static_cast<std::uint32_t>(s));
    for (std::size_t k = 0; k < r.label_dim(); ++k)
      w.f64(r.label(s, k));
    for (std::size_t m = 0; m < r.modalities.size(); ++m) {
      auto chunk = r.frame(m, s);
      w.u32(static_cast<std::uint32_t>(chunk.size()));
      w.raw(chunk);
    }
  }
  auto &buf = w.buffer();
  auto crc = crc32_of(std::span<const std::uint8_t>(buf).subspan(4));
  w.u32(crc);
  return std::move(buf);
}

SequenceRecord decode_record(std::span<const std::uint8_t> bytes) {
  RecordHeader h = parse_header(bytes, bytes.size());
  if (bytes.size() < h.payload_offset + 4)
    throw CorruptionError("record truncated before checksum", bytes.size());
  const std::size_t end = bytes.size() - 4;

  SequenceRecord r;
  r.subject_id = h.subject_id;
  r.step_period = h.step_period;
  r.num_steps = h.num_steps;
  r.label_names = h.label_names;
  r.modalities = h.modalities;
  const std::size_t label_dim = r.label_names.size();

  std::vector<std::size_t> frame_bytes;
  std::size_t step_bytes = 4 + 8 * label_dim;
  for (const auto &m : r.modalities) {
    frame_bytes.push_back(m.frame_bytes());
    step_bytes += 4 + m.frame_bytes();
  }
  // Reserve only when the declared size is plausible; the step loop reports
  // the exact truncation point otherwise.
  r.frames.resize(r.modalities.size());
  if (step_bytes > 0 && r.num_steps <= (end - h.payload_offset) / step_bytes + 1) {
    r.labels.reserve(r.num_steps * label_dim);
    for (std::size_t m = 0; m < r.modalities.size(); ++m)
      r.frames[m].bytes.reserve(r.num_steps * frame_bytes[m]);
  }

  std::size_t pos = h.payload_offset;
  auto need = [&](std::size_t n, std::size_t step) {
    if (pos + n > end)
      throw CorruptionError("record truncated in step " + std::to_string(step),
                            pos);
  };
  for (std::size_t s = 0; s < r.num_steps; ++s) {
    need(4 + 8 * label_dim, s);
    if (read_u32(bytes, pos) != s)
      throw CorruptionError("step index mismatch at step " + std::to_string(s),
                            pos);
    pos += 4;
    for (std::size_t k = 0; k < label_dim; ++k, pos += 8)
      r.labels.push_back(read_f64(bytes, pos));
    for (std::size_t m = 0; m < r.modalities.size(); ++m) {
      need(4, s);
      std::size_t len = read_u32(bytes, pos);
      if (len != frame_bytes[m])
        throw CorruptionError("payload length mismatch for modality '" +
                                r.modalities[m].name + "' at step " +
                                std::to_string(s),
                              pos);
      pos += 4;
      need(len, s);
      r.frames[m].bytes.insert(r.frames[m].bytes.end(), bytes.begin() + pos,
                               bytes.begin() + pos + len);
      pos += len;
    }
  }
  if (pos != end)
    throw CorruptionError("trailing bytes after last step", pos);
  auto stored = read_u32(bytes, end);
  auto actual = crc32_of(bytes.subspan(4, end - 4));
  if (stored != actual)
    throw CorruptionError("checksum mismatch", end);
  try {
    validate_record(r);
  } catch (const ValidationError &e) {
    throw CorruptionError(std::string("decoded record is invalid: ") + e.what(),
                          h.payload_offset);
  }
  return r;
}

std::size_t WriteReport::total_bytes() const {
  std::size_t n = 0;
  for (const auto &f : files)
    n += f.bytes;
  return n;
}

WriteReport write_records(std::span<const SequenceRecord> records,
                          const std::filesystem::path &dir) {
  WriteReport report;
  if (records.empty())
    return report;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  for (const auto &r : records) {
    auto bytes = encode_record(r);
    auto path = dir / (r.subject_id + kRecordExtension);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char *>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw IoError("write failed for " + path.string());
    report.files.push_back({path, bytes.size(), read_u32(bytes, bytes.size() - 4)});
  }
  return report;
}

RecordFile::RecordFile(std::filesystem::path path) : path_(std::move(path)) {
  std::error_code ec;
  file_size_ = std::filesystem::file_size(path_, ec);
  if (ec)
    throw IoError("cannot stat " + path_.string() + ": " + ec.message());
  std::ifstream in(path_, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path_.string());
  std::vector<std::uint8_t> pre(kPreambleBytes);
  in.read(reinterpret_cast<char *>(pre.data()), kPreambleBytes);
  auto got = static_cast<std::size_t>(in.gcount());
  if (got < 4 || std::memcmp(pre.data(), kMagic, 4) != 0)
    throw UnsupportedFormatError(path_.string() + ": not an e2y record (bad magic)");
  if (got < kPreambleBytes)
    throw CorruptionError(path_.string() + ": truncated preamble", got);
  std::size_t header_len = read_u32(pre, 6);
  if (header_len > file_size_ - kPreambleBytes)
    throw CorruptionError(path_.string() + ": header length exceeds file size", 6);
  pre.resize(kPreambleBytes + header_len);
  in.read(reinterpret_cast<char *>(pre.data() + kPreambleBytes),
          static_cast<std::streamsize>(header_len));
  try {
    header_ = parse_header(pre, pre.size());
  } catch (const CorruptionError &e) {
    throw CorruptionError(path_.string() + ": " + e.what(), e.offset());
  } catch (const UnsupportedFormatError &e) {
    throw UnsupportedFormatError(path_.string() + ": " + e.what());
  }
}

SequenceRecord RecordFile::load() const {
  std::ifstream in(path_, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path_.string());
  std::vector<std::uint8_t> bytes(file_size_);
  in.read(reinterpret_cast<char *>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw IoError("short read on " + path_.string());
  try {
    return decode_record(bytes);
  } catch (const CorruptionError &e) {
    throw CorruptionError(path_.string() + ": " + e.what(), e.offset());
  } catch (const UnsupportedFormatError &e) {
    throw UnsupportedFormatError(path_.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path>
list_record_files(const std::filesystem::path &path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec))
    throw IoError("no such file or directory: " + path.string());
  if (!std::filesystem::is_directory(path, ec))
    return {path};
  std::vector<std::filesystem::path> files;
  for (const auto &entry : std::filesystem::directory_iterator(path))
    if (entry.is_regular_file() && entry.path().extension() == kRecordExtension)
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

RecordStream::RecordStream(const std::filesystem::path &path)
  : files_(list_record_files(path)) {}

std::optional<SequenceRecord> RecordStream::next() {
  if (cursor_ >= files_.size())
    return std::nullopt;
  return RecordFile(files_[cursor_++]).load();
}

std::vector<SequenceRecord> read_records(const std::filesystem::path &path) {
  std::vector<SequenceRecord> out;
  RecordStream stream(path);
  while (auto r = stream.next())
    out.push_back(std::move(*r));
  return out;
}

} // namespace e2y
