// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <e2y/error.hpp>
#include <e2y/ingestion.hpp>

#include <gtest/gtest.h>

#include <fstream>

using namespace e2y;
using namespace e2y::testing;

namespace {

void write_text(const std::filesystem::path &p, const std::string &text) {
  std::ofstream out(p);
  out << text;
}

// Hand-built RIFF container, independent of the library's writer.
void write_wav(const std::filesystem::path &p, std::uint16_t format, std::uint16_t channels,
               std::uint32_t rate, std::uint16_t bits, const std::vector<std::uint8_t> &data) {
  std::vector<std::uint8_t> out;
  auto put = [&](const void *src, std::size_t n) {
    auto b = static_cast<const std::uint8_t *>(src);
    out.insert(out.end(), b, b + n);
  };
  auto u32 = [&](std::uint32_t v) { put(&v, 4); };
  auto u16 = [&](std::uint16_t v) { put(&v, 2); };
  put("RIFF", 4);
  u32(static_cast<std::uint32_t>(36 + data.size()));
  put("WAVE", 4);
  put("fmt ", 4);
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  put("data", 4);
  u32(static_cast<std::uint32_t>(data.size()));
  put(data.data(), data.size());
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char *>(out.data()), static_cast<std::streamsize>(out.size()));
}

template <class T> std::vector<std::uint8_t> bytes_of(const std::vector<T> &v) {
  std::vector<std::uint8_t> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

ImageFrame solid(std::size_t h, std::size_t w, std::uint8_t value) {
  ImageFrame f;
  f.height = h;
  f.width = w;
  f.channels = 3;
  f.pixels.assign(h * w * 3, value);
  return f;
}

} // namespace

TEST(DecodeAudio, Pcm16FullScale) {
  TempDir dir;
  write_wav(dir / "a.wav", 1, 1, 16000, 16, bytes_of(std::vector<std::int16_t>{32767, -32768, 0}));
  auto s = decode_audio(dir / "a.wav");
  ASSERT_EQ(s.samples.size(), 3u);
  EXPECT_FLOAT_EQ(s.samples[0], 32767.0f / 32768.0f);
  EXPECT_FLOAT_EQ(s.samples[1], -1.0f);
  EXPECT_EQ(s.rate, 16000.0);
}

TEST(DecodeAudio, SilentSecond) {
  TempDir dir;
  write_wav_pcm16(dir / "s.wav", std::vector<std::int16_t>(16000, 0), 1, 16000);
  auto s = decode_audio(dir / "s.wav");
  EXPECT_EQ(s.samples.size(), 16000u);
  EXPECT_TRUE(std::all_of(s.samples.begin(), s.samples.end(), [](float v) { return v == 0; }));
}

TEST(DecodeAudio, StereoAveragesToMono) {
  TempDir dir;
  write_wav(dir / "st.wav", 3, 2, 8000, 32, bytes_of(std::vector<float>{0.5f, -0.5f, 0.25f, 0.75f}));
  auto s = decode_audio(dir / "st.wav");
  ASSERT_EQ(s.samples.size(), 2u);
  EXPECT_EQ(s.channels, 1u);
  EXPECT_FLOAT_EQ(s.samples[0], 0.0f);
  EXPECT_FLOAT_EQ(s.samples[1], 0.5f);
}

TEST(DecodeAudio, EightAndThirtyTwoBit) {
  TempDir dir;
  write_wav(dir / "u8.wav", 1, 1, 100, 8, {0, 128, 255});
  auto a = decode_audio(dir / "u8.wav");
  EXPECT_FLOAT_EQ(a.samples[0], -1.0f);
  EXPECT_FLOAT_EQ(a.samples[1], 0.0f);
  EXPECT_FLOAT_EQ(a.samples[2], 127.0f / 128.0f);
  write_wav(dir / "i32.wav", 1, 1, 100, 32,
            bytes_of(std::vector<std::int32_t>{INT32_MIN, 1 << 30}));
  auto b = decode_audio(dir / "i32.wav");
  EXPECT_FLOAT_EQ(b.samples[0], -1.0f);
  EXPECT_FLOAT_EQ(b.samples[1], 0.5f);
}

TEST(DecodeAudio, UnsupportedCodec) {
  TempDir dir;
  write_wav(dir / "alaw.wav", 6, 1, 8000, 8, {1, 2, 3});
  EXPECT_THROW(decode_audio(dir / "alaw.wav"), UnsupportedFormatError);
  write_text(dir / "junk.wav", "not a wave file at all");
  EXPECT_THROW(decode_audio(dir / "junk.wav"), UnsupportedFormatError);
}

TEST(DecodeNumericCsv, InfersRate) {
  TempDir dir;
  write_text(dir / "p.csv", "time,ecg\n0.00,0.1\n0.01,0.2\n0.02,0.3\n");
  auto s = decode_numeric_csv(dir / "p.csv", 1);
  EXPECT_NEAR(s.rate, 100.0, 1e-9);
  ASSERT_EQ(s.samples.size(), 3u);
  EXPECT_FLOAT_EQ(s.samples[2], 0.3f);
  EXPECT_EQ(s.channel_names, std::vector<std::string>{"ecg"});
}

TEST(DecodeNumericCsv, Errors) {
  TempDir dir;
  write_text(dir / "one.csv", "time,ecg\n0.0,1\n");
  EXPECT_THROW(decode_numeric_csv(dir / "one.csv"), ParseError);
  write_text(dir / "gap.csv", "time,ecg\n0,1\n0.01,2\n0.05,3\n");
  EXPECT_THROW(decode_numeric_csv(dir / "gap.csv"), ParseError);
  write_text(dir / "order.csv", "time,ecg\n0,1\n0.02,2\n0.01,3\n");
  EXPECT_THROW(decode_numeric_csv(dir / "order.csv"), ParseError);
  write_text(dir / "cell.csv", "time,ecg\n0,1\n0.01,abc\n0.02,3\n");
  try {
    decode_numeric_csv(dir / "cell.csv");
    FAIL();
  } catch (const ParseError &e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
  write_text(dir / "notime.csv", "t,ecg\n0,1\n0.01,2\n");
  EXPECT_THROW(decode_numeric_csv(dir / "notime.csv"), ParseError);
  write_text(dir / "cols.csv", "time,ecg\n0,1\n0.01,2\n");
  EXPECT_THROW(decode_numeric_csv(dir / "cols.csv", 2), ParseError);
}

TEST(DecodeVideo, SortedFrames) {
  TempDir dir;
  for (int ms : {80, 0, 40})
    write_png(dir / (std::to_string(ms) + ".png"), solid(64, 64, static_cast<std::uint8_t>(ms)));
  auto frames = decode_video_frames(dir.path());
  ASSERT_EQ(frames.size(), 3u);
  EXPECT_NEAR(frames[0].timestamp, 0.00, 1e-12);
  EXPECT_NEAR(frames[1].timestamp, 0.04, 1e-12);
  EXPECT_NEAR(frames[2].timestamp, 0.08, 1e-12);
  EXPECT_EQ(frames[1].pixels[0], 40);
  EXPECT_EQ(frames[2].height, 64u);
}

TEST(DecodeVideo, Errors) {
  TempDir dir;
  std::filesystem::create_directories(dir / "empty");
  try {
    decode_video_frames(dir / "empty");
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find("no frames found"), std::string::npos);
  }
  std::filesystem::create_directories(dir / "mixed");
  write_png(dir / "mixed" / "0.png", solid(64, 64, 1));
  write_png(dir / "mixed" / "40.png", solid(32, 32, 1));
  EXPECT_THROW(decode_video_frames(dir / "mixed"), ValidationError);
  std::filesystem::create_directories(dir / "bad");
  write_text(dir / "bad" / "0.png", "garbage");
  try {
    decode_video_frames(dir / "bad");
    FAIL();
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find("0.png"), std::string::npos);
  }
}

TEST(Align, AudioChunking) {
  RawSignal audio;
  audio.rate = 100;
  for (int i = 0; i < 12; ++i)
    audio.samples.push_back(static_cast<float>(i));
  LabelTable labels{{"arousal"}, {0.0, 0.04, 0.08}, {0.1, 0.2, 0.3}};
  auto r = align_to_labels({"s", audio, std::nullopt, std::nullopt}, labels, 0.04);
  EXPECT_EQ(r.num_steps, 3u);
  auto m = *r.find_modality("audio");
  EXPECT_EQ(r.modalities[m].frame_shape, std::vector<std::size_t>{4});
  const auto all = r.frames[m].as_float32();
  for (int i = 0; i < 12; ++i)
    EXPECT_EQ(all[static_cast<std::size_t>(i)], static_cast<float>(i));
}

TEST(Align, AudioShortByOneStep) {
  RawSignal audio;
  audio.rate = 100;
  audio.samples.assign(8, 0.0f);
  LabelTable labels{{"arousal"}, {0.0, 0.04, 0.08}, {0.1, 0.2, 0.3}};
  try {
    align_to_labels({"s", audio, std::nullopt, std::nullopt}, labels, 0.04);
    FAIL();
  } catch (const CoverageError &e) {
    EXPECT_NE(std::string(e.what()).find("short by 1 step"), std::string::npos) << e.what();
  }
}

TEST(Align, VideoNearestFrame) {
  std::vector<ImageFrame> frames;
  for (int i = 0; i < 3; ++i) {
    auto f = solid(32, 32, static_cast<std::uint8_t>(10 * i));
    f.timestamp = 0.04 * i;
    frames.push_back(f);
  }
  LabelTable labels{{"arousal"}, {0.0, 0.04}, {0.1, 0.2}};
  auto r = align_to_labels({"s", std::nullopt, frames, std::nullopt}, labels, 0.04);
  auto m = *r.find_modality("video");
  EXPECT_EQ(r.frame(m, 0)[0], 0);
  EXPECT_EQ(r.frame(m, 1)[0], 10);
}

TEST(Align, ChunksPartitionSignal) {
  std::mt19937_64 rng(3);
  RawSignal audio;
  audio.rate = 16000;
  audio.samples.resize(16000 * 2 + 123);
  for (auto &v : audio.samples)
    v = static_cast<float>(random_series(rng, 1)[0]);
  LabelTable labels;
  labels.names = {"a", "b"};
  for (int i = 0; i < 50; ++i) {
    labels.times.push_back(0.04 * i);
    labels.values.push_back(i);
    labels.values.push_back(-i);
  }
  auto r = align_to_labels({"s", audio, std::nullopt, std::nullopt}, labels, 0.04);
  EXPECT_EQ(r.num_steps, 50u);
  auto flat = r.frames[0].as_float32();
  ASSERT_EQ(flat.size(), 50u * 640u);
  EXPECT_TRUE(std::equal(flat.begin(), flat.end(), audio.samples.begin()));
  EXPECT_EQ(encode_record(r),
            encode_record(align_to_labels({"s", audio, std::nullopt, std::nullopt}, labels, 0.04)));
}

TEST(Align, NonIntegerMultipleRejected) {
  RawSignal audio;
  audio.rate = 30;
  audio.samples.assign(100, 0.0f);
  LabelTable labels{{"a"}, {0.0, 0.04}, {0, 0}};
  EXPECT_THROW(align_to_labels({"s", audio, std::nullopt, std::nullopt}, labels, 0.04),
               ValidationError);
}

TEST(Manifest, GenerateTwoSubjectsAndMissingFile) {
  TempDir dir;
  for (const char *id : {"a", "b"}) {
    write_wav_pcm16(dir / (std::string(id) + ".wav"), std::vector<std::int16_t>(16000, 100), 1,
                    16000);
    std::string labels = "time,arousal,valence\n";
    for (int i = 0; i < 25; ++i)
      labels += std::to_string(0.04 * i) + ",0.1,0.2\n";
    write_text(dir / (std::string(id) + "_labels.csv"), labels);
  }
  write_text(dir / "m.csv", "subject_id,audio,video,physio,labels\n"
                            "a,a.wav,,,a_labels.csv\n"
                            "b,b.wav,,,b_labels.csv\n");
  auto rows = read_manifest(dir / "m.csv");
  ASSERT_EQ(rows.size(), 2u);
  auto rec = generate_record(rows[0], 0.04, {"arousal", "valence"});
  EXPECT_EQ(rec.num_steps, 25u);
  EXPECT_EQ(rec.modalities[0].frame_shape, std::vector<std::size_t>{640});
  EXPECT_THROW(generate_record(rows[0], 0.04, {"valence"}), ValidationError);

  write_text(dir / "bad.csv", "subject_id,audio,video,physio,labels\n"
                              "c,missing.wav,,,a_labels.csv\n");
  auto bad = read_manifest(dir / "bad.csv");
  try {
    generate_record(bad[0], 0.04);
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find("missing.wav"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdsRejected) {
  TempDir dir;
  write_text(dir / "m.csv", "subject_id,audio,video,physio,labels\na,,,,l.csv\na,,,,l.csv\n");
  EXPECT_THROW(read_manifest(dir / "m.csv"), ValidationError);
}
