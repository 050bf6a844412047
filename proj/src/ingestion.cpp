// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ingestion.cpp
 * @brief  WAV / CSV / PNG decoding and alignment onto the label timeline.
 */
#include <e2y/error.hpp>
#include <e2y/ingestion.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <png.h>

namespace e2y {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t le32(const std::uint8_t *p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const std::uint8_t *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos)
    return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(
      start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos)
      break;
    start = comma + 1;
  }
  return cells;
}

double parse_number(const std::string &cell, const std::filesystem::path &path,
                    std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw ParseError(path.string() + ": row " + std::to_string(line) +
                     ": non-numeric cell '" + cell + "'");
  return v;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<double> times;
  std::vector<double> values; // rows x (header.size() - 1)
};

CsvTable read_time_csv(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = cells;
      if (t.header.size() < 2 || t.header[0] != "time")
        throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                         ": header must start with 'time' followed by at "
                         "least one value column");
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                       ": expected " + std::to_string(t.header.size()) +
                       " columns, found " + std::to_string(cells.size()));
    double time = parse_number(cells[0], path, lineno);
    if (!t.times.empty() && !(time > t.times.back()))
      throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                       ": time column is not strictly increasing");
    t.times.push_back(time);
    for (std::size_t c = 1; c < cells.size(); ++c)
      t.values.push_back(parse_number(cells[c], path, lineno));
  }
  if (t.header.empty())
    throw ParseError(path.string() + ": empty CSV");
  return t;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Returns the median interval; throws when any interval strays beyond the
// tolerance.
double uniform_interval(const std::vector<double> &times,
                        const std::filesystem::path &path) {
  if (times.size() < 2)
    throw ParseError(path.string() + ": at least two rows are needed to infer a rate");
  std::vector<double> gaps;
  for (std::size_t i = 1; i < times.size(); ++i)
    gaps.push_back(times[i] - times[i - 1]);
  double med = median_of(gaps);
  for (std::size_t i = 0; i < gaps.size(); ++i)
    if (std::abs(gaps[i] - med) > kSpacingTolerance * med)
      throw ParseError(path.string() + ": row " + std::to_string(i + 3) +
                       ": non-uniform spacing (interval " +
                       std::to_string(gaps[i]) + " s vs median " +
                       std::to_string(med) + " s)");
  return med;
}

std::size_t integer_chunk(double rate, double step_period, const std::string &what) {
  double exact = rate * step_period;
  double nearest = std::round(exact);
  if (nearest < 1 || std::abs(exact - nearest) > 1e-6 * std::max(1.0, exact))
    throw ValidationError(what + ": rate " + std::to_string(rate) +
                          " Hz is not an integer multiple of the label rate (" +
                          std::to_string(1.0 / step_period) + " Hz)");
  return static_cast<std::size_t>(nearest);
}

void chop_signal(const RawSignal &signal, const LabelTable &labels,
                 double step_period, const std::string &name, ModalityKind kind,
                 SequenceRecord &record) {
  std::size_t chunk = integer_chunk(signal.rate, step_period, name);
  std::size_t steps = labels.rows();
  auto offset = static_cast<std::size_t>(std::llround(std::max(0.0, labels.times[0]) * signal.rate));
  std::size_t available = signal.num_frames() > offset ? signal.num_frames() - offset : 0;
  std::size_t covered = available / chunk;
  if (covered < steps) {
    auto deficit = steps - covered;
    throw CoverageError(record.subject_id + ": " + name + " signal short by " +
                          std::to_string(deficit) +
                          (deficit == 1 ? " step" : " steps"),
                        deficit);
  }
  ModalityDescriptor d;
  d.name = name;
  d.kind = kind;
  d.sample_rate = signal.rate;
  d.frame_shape = {chunk * signal.channels};
  auto first = signal.samples.begin() + static_cast<std::ptrdiff_t>(offset * signal.channels);
  std::vector<float> values(first, first + static_cast<std::ptrdiff_t>(steps * chunk * signal.channels));
  add_float_modality(record, std::move(d), values);
}

} // namespace

RawSignal decode_audio(const std::filesystem::path &path) {
  auto bytes = slurp(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw UnsupportedFormatError(path.string() + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t *data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t *id = bytes.data() + pos;
    std::size_t len = le32(bytes.data() + pos + 4);
    std::size_t body = pos + 8;
    std::size_t avail = bytes.size() - body;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16 || len > avail)
        throw UnsupportedFormatError(path.string() + ": malformed fmt chunk");
      const auto *f = bytes.data() + body;
      format = le16(f);
      channels = le16(f + 2);
      rate = le32(f + 4);
      bits = le16(f + 14);
      if (format == 0xFFFE) {
        if (len < 26)
          throw UnsupportedFormatError(path.string() + ": malformed extensible fmt chunk");
        format = le16(f + 24);
      }
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = std::min(len, avail);
    }
    pos = body + len + (len & 1);
  }
  if (format == 0 || data == nullptr)
    throw UnsupportedFormatError(path.string() + ": missing fmt or data chunk");
  if (channels == 0 || rate == 0)
    throw UnsupportedFormatError(path.string() + ": zero channels or sample rate");
  bool pcm = format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  bool ieee = format == 3 && bits == 32;
  if (!pcm && !ieee)
    throw UnsupportedFormatError(path.string() + ": unsupported codec (format " +
                                 std::to_string(format) + ", " +
                                 std::to_string(bits) + " bits)");

  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  RawSignal sig;
  sig.rate = rate;
  sig.channels = 1;
  sig.channel_names = {"mono"};
  sig.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t *p = data + (i * channels + c) * width;
      double v = 0.0;
      if (ieee) {
        float f;
        std::memcpy(&f, p, 4);
        if (!std::isfinite(f))
          throw ValidationError(path.string() + ": non-finite float sample at frame " +
                                std::to_string(i));
        v = std::clamp(static_cast<double>(f), -1.0, 1.0);
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
        if (s & 0x800000)
          s |= ~0xFFFFFF;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
      }
      acc += v;
    }
    sig.samples[i] = static_cast<float>(acc / channels);
  }
  return sig;
}

RawSignal decode_numeric_csv(const std::filesystem::path &path,
                             std::size_t expected_channels) {
  auto table = read_time_csv(path);
  std::size_t channels = table.header.size() - 1;
  if (expected_channels != 0 && channels != expected_channels)
    throw ParseError(path.string() + ": row 1: expected " +
                     std::to_string(expected_channels) + " value columns, found " +
                     std::to_string(channels));
  double interval = uniform_interval(table.times, path);
  RawSignal sig;
  sig.rate = 1.0 / interval;
  // Snap near-integer rates so 0.01 s spacing reads as exactly 100 Hz.
  if (std::abs(sig.rate - std::round(sig.rate)) < 1e-6 * sig.rate)
    sig.rate = std::round(sig.rate);
  sig.channels = channels;
  sig.channel_names.assign(table.header.begin() + 1, table.header.end());
  sig.samples.reserve(table.values.size());
  for (double v : table.values)
    sig.samples.push_back(static_cast<float>(v));
  return sig;
}

LabelTable read_label_csv(const std::filesystem::path &path) {
  auto table = read_time_csv(path);
  if (table.times.empty())
    throw ParseError(path.string() + ": no label rows");
  if (table.times.size() >= 2)
    uniform_interval(table.times, path);
  LabelTable labels;
  labels.names.assign(table.header.begin() + 1, table.header.end());
  labels.times = std::move(table.times);
  labels.values = std::move(table.values);
  return labels;
}

namespace {

ImageFrame read_png(const std::filesystem::path &path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError(path.string() + ": unreadable image (" + image.message + ")");
  image.format &= ~(PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP);
  ImageFrame frame;
  frame.height = image.height;
  frame.width = image.width;
  frame.channels = PNG_IMAGE_SAMPLE_CHANNELS(image.format);
  frame.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, frame.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError(path.string() + ": unreadable image (" + msg + ")");
  }
  return frame;
}

} // namespace

std::vector<ImageFrame> decode_video_frames(const std::filesystem::path &dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw IoError("not a directory: " + dir.string());
  std::vector<std::pair<long long, std::filesystem::path>> files;
  for (const auto &entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png")
      continue;
    auto stem = entry.path().stem().string();
    long long ms = 0;
    auto [ptr, perr] = std::from_chars(stem.data(), stem.data() + stem.size(), ms);
    if (perr != std::errc() || ptr != stem.data() + stem.size() || ms < 0)
      throw ValidationError(entry.path().string() +
                            ": frame name must be <milliseconds>.png");
    files.emplace_back(ms, entry.path());
  }
  if (files.empty())
    throw ValidationError(dir.string() + ": no frames found");
  std::sort(files.begin(), files.end());
  std::vector<ImageFrame> frames;
  frames.reserve(files.size());
  for (const auto &[ms, path] : files) {
    auto frame = read_png(path);
    frame.timestamp = static_cast<double>(ms) / 1000.0;
    if (!frames.empty() &&
        (frame.height != frames[0].height || frame.width != frames[0].width ||
         frame.channels != frames[0].channels))
      throw ValidationError(dir.string() + ": mixed resolutions (" +
                            path.filename().string() + " is " +
                            std::to_string(frame.height) + "x" +
                            std::to_string(frame.width) + "x" +
                            std::to_string(frame.channels) + ", first frame is " +
                            std::to_string(frames[0].height) + "x" +
                            std::to_string(frames[0].width) + "x" +
                            std::to_string(frames[0].channels) + ")");
    frames.push_back(std::move(frame));
  }
  return frames;
}

SequenceRecord align_to_labels(const AlignmentInputs &inputs,
                               const LabelTable &labels, double step_period) {
  if (!(step_period > 0.0))
    throw ValidationError("step_period must be positive");
  if (labels.rows() == 0)
    throw ValidationError(inputs.subject_id + ": no label rows");
  for (std::size_t i = 1; i < labels.rows(); ++i) {
    double gap = labels.times[i] - labels.times[i - 1];
    if (std::abs(gap - step_period) > kSpacingTolerance * step_period)
      throw ValidationError(inputs.subject_id + ": label row " + std::to_string(i) +
                            " is " + std::to_string(gap) +
                            " s after its predecessor, step_period is " +
                            std::to_string(step_period) + " s");
  }

  SequenceRecord record;
  record.subject_id = inputs.subject_id;
  record.step_period = step_period;
  record.num_steps = labels.rows();
  record.label_names = labels.names;
  record.labels = labels.values;

  if (inputs.audio)
    chop_signal(*inputs.audio, labels, step_period, "audio", ModalityKind::audio, record);

  if (inputs.video) {
    const auto &frames = *inputs.video;
    if (frames.empty())
      throw ValidationError(inputs.subject_id + ": no frames found");
    const double slack = step_period / 2 + 1e-9;
    std::size_t deficit = 0;
    for (double t : labels.times)
      if (t > frames.back().timestamp + slack || t < frames.front().timestamp - slack)
        ++deficit;
    if (deficit > 0)
      throw CoverageError(inputs.subject_id + ": video signal short by " +
                            std::to_string(deficit) +
                            (deficit == 1 ? " step" : " steps"),
                          deficit);
    const auto &f0 = frames.front();
    ModalityDescriptor d;
    d.name = "video";
    d.kind = ModalityKind::video;
    if (frames.size() >= 2) {
      std::vector<double> gaps;
      for (std::size_t i = 1; i < frames.size(); ++i)
        gaps.push_back(frames[i].timestamp - frames[i - 1].timestamp);
      d.sample_rate = 1.0 / median_of(gaps);
    } else {
      d.sample_rate = 1.0 / step_period;
    }
    d.frame_shape = {f0.height, f0.width, f0.channels};
    std::vector<std::uint8_t> pixels;
    pixels.reserve(record.num_steps * f0.pixels.size());
    for (double t : labels.times) {
      auto it = std::lower_bound(frames.begin(), frames.end(), t,
                                 [](const ImageFrame &f, double v) { return f.timestamp < v; });
      const ImageFrame *pick;
      if (it == frames.end()) {
        pick = &frames.back();
      } else if (it == frames.begin()) {
        pick = &*it;
      } else {
        auto prev = std::prev(it);
        // ties resolve toward the earlier frame
        pick = (it->timestamp - t) < (t - prev->timestamp) ? &*it : &*prev;
      }
      pixels.insert(pixels.end(), pick->pixels.begin(), pick->pixels.end());
    }
    add_byte_modality(record, std::move(d), pixels);
  }

  if (inputs.physio)
    chop_signal(*inputs.physio, labels, step_period, "physio", ModalityKind::numeric,
                record);

  validate_record(record);
  return record;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  auto resolve = [&](const std::string &cell) -> std::optional<std::filesystem::path> {
    if (cell.empty())
      return std::nullopt;
    std::filesystem::path p(cell);
    return p.is_absolute() ? p : base / p;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty())
      continue;
    auto cells = split_csv_line(line);
    if (!header_seen) {
      const std::vector<std::string> expected{"subject_id", "audio", "video",
                                              "physio", "labels"};
      if (cells != expected)
        throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                         ": header must be subject_id,audio,video,physio,labels");
      header_seen = true;
      continue;
    }
    if (cells.size() != 5)
      throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                       ": expected 5 columns");
    ManifestRow row;
    row.subject_id = cells[0];
    if (row.subject_id.empty())
      throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                       ": empty subject_id");
    if (!seen.insert(row.subject_id).second)
      throw ValidationError(path.string() + ": row " + std::to_string(lineno) +
                            ": duplicate subject_id '" + row.subject_id + "'");
    row.audio = resolve(cells[1]);
    row.video = resolve(cells[2]);
    row.physio = resolve(cells[3]);
    auto labels = resolve(cells[4]);
    if (!labels)
      throw ParseError(path.string() + ": row " + std::to_string(lineno) +
                       ": labels path is required");
    row.labels = *labels;
    rows.push_back(std::move(row));
  }
  if (!header_seen)
    throw ParseError(path.string() + ": empty manifest");
  return rows;
}

SequenceRecord generate_record(const ManifestRow &row, double step_period,
                               const std::vector<std::string> &label_names) {
  auto require = [&](const std::filesystem::path &p) {
    std::error_code ec;
    if (!std::filesystem::exists(p, ec))
      throw ValidationError(row.subject_id + ": missing file " + p.string());
  };
  require(row.labels);
  if (row.audio)
    require(*row.audio);
  if (row.video)
    require(*row.video);
  if (row.physio)
    require(*row.physio);

  auto labels = read_label_csv(row.labels);
  if (!label_names.empty() && labels.names != label_names) {
    std::string got;
    for (const auto &n : labels.names)
      got += (got.empty() ? "" : ",") + n;
    throw ValidationError(row.labels.string() + ": label columns '" + got +
                          "' do not match the labels schema");
  }
  AlignmentInputs inputs;
  inputs.subject_id = row.subject_id;
  if (row.audio)
    inputs.audio = decode_audio(*row.audio);
  if (row.video)
    inputs.video = decode_video_frames(*row.video);
  if (row.physio)
    inputs.physio = decode_numeric_csv(*row.physio);
  return align_to_labels(inputs, labels, step_period);
}

void write_png(const std::filesystem::path &path, const ImageFrame &frame) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width);
  image.height = static_cast<png_uint_32>(frame.height);
  switch (frame.channels) {
  case 1:
    image.format = PNG_FORMAT_GRAY;
    break;
  case 2:
    image.format = PNG_FORMAT_GA;
    break;
  case 3:
    image.format = PNG_FORMAT_RGB;
    break;
  case 4:
    image.format = PNG_FORMAT_RGBA;
    break;
  default:
    throw ValidationError("PNG frames need 1-4 channels");
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, frame.pixels.data(), 0, nullptr))
    throw IoError(path.string() + ": PNG write failed (" + image.message + ")");
}

void write_wav_pcm16(const std::filesystem::path &path,
                     const std::vector<std::int16_t> &interleaved,
                     std::size_t channels, std::uint32_t rate) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      out.put(static_cast<char>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    out.put(static_cast<char>(v));
    out.put(static_cast<char>(v >> 8));
  };
  std::uint32_t data_len = static_cast<std::uint32_t>(interleaved.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_len);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(static_cast<std::uint16_t>(channels));
  put32(rate);
  put32(rate * static_cast<std::uint32_t>(channels) * 2);
  put16(static_cast<std::uint16_t>(channels * 2));
  put16(16);
  out.write("data", 4);
  put32(data_len);
  for (auto s : interleaved)
    put16(static_cast<std::uint16_t>(s));
  if (!out)
    throw IoError("write failed for " + path.string());
}

} // namespace e2y
