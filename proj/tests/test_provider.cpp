// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <e2y/error.hpp>
#include <e2y/provider.hpp>

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace e2y;
using namespace e2y::testing;

namespace {

std::shared_ptr<const SequenceRecord> shared(SequenceRecord r) {
  return std::make_shared<const SequenceRecord>(std::move(r));
}

std::vector<std::pair<std::size_t, std::size_t>> spans(const std::vector<WindowView> &w) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto &v : w)
    out.emplace_back(v.start, v.length);
  return out;
}

} // namespace

TEST(Windows, Examples) {
  std::mt19937_64 rng(1);
  auto r10 = shared(random_record(rng, "a", 10, false, false, true));
  EXPECT_EQ(spans(make_windows(r10, 4, 4)),
            (std::vector<std::pair<std::size_t, std::size_t>>{{0, 4}, {4, 4}, {8, 2}}));
  auto r3 = shared(random_record(rng, "b", 3, false, false, true));
  EXPECT_EQ(spans(make_windows(r3, 8, 8)),
            (std::vector<std::pair<std::size_t, std::size_t>>{{0, 3}}));
  EXPECT_EQ(spans(make_windows(r3, 1, 1)),
            (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 1}, {2, 1}}));
  EXPECT_THROW(make_windows(r3, 0, 1), ParameterError);
  EXPECT_THROW(make_windows(r3, 1, 0), ParameterError);
}

TEST(Windows, OverlapCoversEveryStep) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 1 + rng() % 40, seq = 1 + rng() % 10, hop = 1 + rng() % seq;
    auto r = shared(random_record(rng, "a", n, false, false, true));
    std::vector<int> seen(n, 0);
    for (const auto &w : make_windows(r, seq, hop))
      for (std::size_t t = 0; t < w.length; ++t)
        ++seen[w.start + t];
    for (auto s : seen)
      EXPECT_GE(s, 1);
  }
}

TEST(Batches, SizesAndPadding) {
  std::mt19937_64 rng(3);
  std::vector<WindowView> windows;
  auto r = shared(random_record(rng, "a", 18, true, true, true));
  for (auto &w : make_windows(r, 4, 4))
    windows.push_back(w);
  ASSERT_EQ(windows.size(), 5u);
  auto batches = batch_windows(windows, {4, 2, std::nullopt, 2});
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].batch_size, 2u);
  EXPECT_EQ(batches[2].batch_size, 1u);
  const Batch &last = batches[2];
  EXPECT_EQ(last.mask.values, (std::vector<std::uint8_t>{1, 1, 0, 0}));
  for (const auto &f : last.frames) {
    EXPECT_EQ(f.row(2).norm(), 0.0);
    EXPECT_EQ(f.row(3).norm(), 0.0);
  }
  EXPECT_EQ(last.labels.row(2).norm(), 0.0);
  // Valid rows carry the record's data.
  const auto vid = *r->find_modality("video");
  EXPECT_EQ(last.find("video")->operator()(0, 5), static_cast<double>(r->frame(vid, 16)[5]));
  EXPECT_EQ(last.labels(1, 1), r->label(17, 1));
  EXPECT_EQ(last.provenance[0], (std::pair<std::string, std::size_t>{"a", 16}));
}

TEST(Batches, SeededOrderIsReproducible) {
  std::mt19937_64 rng(4);
  std::vector<WindowView> windows;
  for (int i = 0; i < 4; ++i)
    for (auto &w : make_windows(shared(random_record(rng, "s" + std::to_string(i), 20, false,
                                                     false, true)),
                                5, 5))
      windows.push_back(w);
  auto order = [&](std::size_t prefetch) {
    std::vector<std::pair<std::string, std::size_t>> out;
    for (const auto &b : batch_windows(windows, {5, 3, 42, prefetch}))
      out.insert(out.end(), b.provenance.begin(), b.provenance.end());
    return out;
  };
  const auto a = order(2), b = order(2), c = order(0);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  std::vector<std::pair<std::string, std::size_t>> unshuffled;
  for (const auto &b2 : batch_windows(windows, {5, 3, std::nullopt, 0}))
    unshuffled.insert(unshuffled.end(), b2.provenance.begin(), b2.provenance.end());
  EXPECT_NE(a, unshuffled);
}

TEST(Batches, HeterogeneousRejected) {
  std::mt19937_64 rng(5);
  auto a = shared(random_record(rng, "a", 4, false, false, true));
  auto b = shared(random_record(rng, "b", 4, true, false, true));
  std::vector<WindowView> w{{a, 0, 4}, {b, 0, 4}};
  EXPECT_THROW(assemble_batch(w, 4), ValidationError);
  EXPECT_THROW(batch_windows(w, {4, 2, std::nullopt, 2}), ValidationError);
}

TEST(BatchesProperty, HopEqualsSeqLenCoversOnce) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<WindowView> windows;
    std::size_t total = 0;
    const std::size_t seq = 1 + rng() % 12;
    for (int i = 0; i < 5; ++i) {
      const std::size_t n = 1 + rng() % 50;
      total += n;
      auto w = make_windows(shared(random_record(rng, "s" + std::to_string(i), n, false, false,
                                                 true)),
                            seq, seq);
      windows.insert(windows.end(), w.begin(), w.end());
    }
    std::size_t mask_sum = 0;
    std::set<std::pair<std::string, std::size_t>> seen;
    for (const auto &b : batch_windows(windows, {seq, 1 + rng() % 6, rng(), 2})) {
      mask_sum += b.mask.count();
      for (std::size_t i = 0; i < b.batch_size; ++i) {
        bool prefix = true;
        for (std::size_t t = 0; t < seq; ++t) {
          const bool on = b.mask.on(i * seq + t);
          if (!on)
            prefix = false;
          else {
            EXPECT_TRUE(prefix) << "interior gap";
            EXPECT_TRUE(seen.insert({b.provenance[i].first, b.provenance[i].second + t}).second);
          }
        }
      }
    }
    EXPECT_EQ(mask_sum, total);
    EXPECT_EQ(seen.size(), total);
  }
}

TEST(Permutation, IsPermutationAndSeeded) {
  auto p = seeded_permutation(100, 9);
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i)
    EXPECT_EQ(sorted[i], i);
  EXPECT_EQ(p, seeded_permutation(100, 9));
  EXPECT_NE(p, seeded_permutation(100, 10));
}
