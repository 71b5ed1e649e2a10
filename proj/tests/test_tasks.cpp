// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>

#include "dat/tasks.hpp"
#include "dat/tensor.hpp"

namespace dat {
namespace {

GridTaskOptions small_grid() {
  GridTaskOptions o;
  o.patch = 6;
  o.n_glyphs = 8;
  return o;
}

// Cell (r, c) of image s as raw bytes.
std::vector<std::uint8_t> cell(const ImageDataset& ds, std::size_t s, std::size_t r, std::size_t c) {
  const auto img = ds.image(s);
  const std::size_t p = ds.patch, w = ds.width, ch = ds.channels;
  std::vector<std::uint8_t> out;
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p * ch; ++x) out.push_back(img[((r * p + y) * w + c * p) * ch + x]);
  return out;
}

bool empty_cell(const std::vector<std::uint8_t>& b) {
  return std::all_of(b.begin(), b.end(), [](std::uint8_t v) { return v == 0; });
}

TEST(Glyphs, DistinctNonEmptyAndDeterministic) {
  const auto g = make_glyphs(24, 12, 3, 1);
  ASSERT_EQ(g.size(), 24u);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_FALSE(empty_cell(g.glyphs[i]));
    for (std::size_t j = 0; j < i; ++j) EXPECT_NE(g.glyphs[i], g.glyphs[j]);
  }
  EXPECT_EQ(make_glyphs(24, 12, 3, 1).glyphs, g.glyphs);
  EXPECT_NE(make_glyphs(24, 12, 3, 2).glyphs, g.glyphs);
  EXPECT_THROW(make_glyphs(0, 12, 3, 1), ConfigError);
}

TEST(SameDifferent, SeedSevenThousandSamplesOracleAndBalance) {
  const auto opt = GridTaskOptions{};
  const auto ds = gen_same_different(1000, 7, opt);
  std::array<int, 2> counts{};
  for (std::size_t s = 0; s < ds.size(); ++s) {
    ASSERT_EQ(same_different_rule(ds.image(s), opt.grid, opt.patch, opt.channels), ds.labels[s]) << "sample " << s;
    ++counts[static_cast<std::size_t>(ds.labels[s])];
  }
  EXPECT_EQ(counts[0], 500);
  EXPECT_EQ(counts[1], 500);
}

TEST(SameDifferent, TwoPopulatedCellsAndOddCountsBalancedWithinOne) {
  const auto ds = gen_same_different(101, 3, small_grid());
  int pos = 0;
  for (std::size_t s = 0; s < ds.size(); ++s) {
    int populated = 0;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) populated += !empty_cell(cell(ds, s, r, c));
    EXPECT_EQ(populated, 2);
    pos += ds.labels[s];
  }
  EXPECT_LE(std::abs(2 * pos - 101), 1);
}

TEST(SameDifferent, RuleOnHandBuiltImages) {
  const auto g = make_glyphs(2, 6, 3, 1);
  ImageDataset ds;
  ds.height = ds.width = 18;
  ds.channels = 3;
  ds.patch = 6;
  ds.pixels.assign(2 * ds.image_bytes(), 0);
  ds.labels = {0, 0};
  auto put = [&](std::size_t s, std::size_t r, std::size_t c, const std::vector<std::uint8_t>& glyph) {
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 18; ++x)
        ds.pixels[s * ds.image_bytes() + ((r * 6 + y) * 18 + c * 6) * 3 + x] = glyph[y * 18 + x];
  };
  put(0, 0, 0, g.glyphs[0]);  // A, A
  put(0, 2, 1, g.glyphs[0]);
  put(1, 1, 1, g.glyphs[0]);  // A, B
  put(1, 0, 2, g.glyphs[1]);
  EXPECT_EQ(same_different_rule(ds.image(0), 3, 6, 3), 1);
  EXPECT_EQ(same_different_rule(ds.image(1), 3, 6, 3), 0);
}

TEST(SameDifferent, Errors) {
  EXPECT_THROW(gen_same_different(1, 0), ConfigError);
  auto o = small_grid();
  o.n_glyphs = 3;
  o.holdout_glyphs = 2;
  EXPECT_THROW(gen_same_different(10, 0, o), ConfigError);  // one in-vocabulary glyph
}

TEST(MatchPattern, TwoThousandSamplesOracleAndUniformMarginals) {
  const auto opt = GridTaskOptions{};
  const auto ds = gen_match_pattern(2000, 11, opt);
  std::array<int, 5> top{};
  std::array<int, 2> labels{};
  for (std::size_t s = 0; s < ds.size(); ++s) {
    ASSERT_EQ(match_pattern_rule(ds.image(s), 3, opt.patch, opt.channels), ds.labels[s]) << "sample " << s;
    ++labels[static_cast<std::size_t>(ds.labels[s])];
    // Pattern class of the top row from byte identities.
    std::vector<std::vector<std::uint8_t>> row{cell(ds, s, 0, 0), cell(ds, s, 0, 1), cell(ds, s, 0, 2)};
    auto id = [&](std::size_t k) { return static_cast<int>(std::find(row.begin(), row.end(), row[k]) - row.begin()); };
    ++top[static_cast<std::size_t>(pattern_class(id(0), id(1), id(2)))];
    for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(empty_cell(cell(ds, s, 1, c)));
  }
  EXPECT_EQ(labels[0], 1000);
  EXPECT_EQ(top[4], 0);  // AAA never drawn
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(top[k] / 2000.0, 0.25, 0.05) << "class " << k;
}

TEST(MatchPattern, PatternClassExamples) {
  EXPECT_EQ(pattern_class(0, 1, 0), 0);  // ABA
  EXPECT_EQ(pattern_class(2, 3, 2), 0);  // CDC: same class, other glyphs
  EXPECT_EQ(pattern_class(0, 1, 1), 1);  // ABB
  EXPECT_EQ(pattern_class(0, 0, 1), 2);  // AAB
  EXPECT_EQ(pattern_class(0, 1, 2), 3);  // ABC
  EXPECT_NE(pattern_class(0, 1, 2), pattern_class(0, 0, 1));
  EXPECT_THROW(gen_match_pattern(10, 0, [] {
                 auto o = small_grid();
                 o.grid = 4;
                 return o;
               }()),
               ConfigError);
}

TEST(Grid, GeneratorsArePureFunctionsOfSeed) {
  for (auto kind : {GridTaskKind::SameDifferent, GridTaskKind::MatchPattern}) {
    const auto a = gen_grid_task(kind, 64, 5, small_grid()), b = gen_grid_task(kind, 64, 5, small_grid());
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(gen_grid_task(kind, 64, 6, small_grid()).pixels, a.pixels);
  }
}

TEST(Grid, HoldoutGlyphPoolIsDisjoint) {
  auto o = small_grid();
  o.n_glyphs = 12;
  o.holdout_glyphs = 4;
  const auto glyphs = make_glyphs(o.n_glyphs, o.patch, o.channels, o.glyph_seed);
  auto used = [&](const ImageDataset& ds) {
    std::set<std::size_t> ids;
    for (std::size_t s = 0; s < ds.size(); ++s)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) {
          const auto b = cell(ds, s, r, c);
          if (empty_cell(b)) continue;
          const auto it = std::find(glyphs.glyphs.begin(), glyphs.glyphs.end(), b);
          EXPECT_NE(it, glyphs.glyphs.end());
          ids.insert(static_cast<std::size_t>(it - glyphs.glyphs.begin()));
        }
    return ids;
  };
  for (auto kind : {GridTaskKind::SameDifferent, GridTaskKind::MatchPattern}) {
    const auto in = used(gen_grid_task(kind, 300, 1, o, GlyphPool::InVocabulary));
    const auto out = used(gen_grid_task(kind, 300, 2, o, GlyphPool::Holdout));
    EXPECT_EQ(*in.rbegin(), 7u);
    EXPECT_EQ(*out.begin(), 8u);
    EXPECT_EQ(out.size(), 4u);
  }
  o.holdout_glyphs = 0;
  EXPECT_THROW(gen_same_different(10, 0, o, GlyphPool::Holdout), ConfigError);
}

TEST(Grid, PrefixIsLeadingSamples) {
  const auto ds = gen_same_different(20, 1, small_grid());
  const auto p = ds.prefix(7);
  ASSERT_EQ(p.size(), 7u);
  EXPECT_TRUE(std::equal(p.pixels.begin(), p.pixels.end(), ds.pixels.begin()));
  EXPECT_THROW(ds.prefix(21), DimensionError);
}

TEST(ReverseStrings, Examples) {
  const auto ds = gen_reverse_strings(500, 6, "abc", 3);
  for (const auto& p : ds.pairs) {
    EXPECT_GE(p.source.size(), 1u);
    EXPECT_LE(p.source.size(), 6u);
    EXPECT_EQ(p.target, std::string(p.source.rbegin(), p.source.rend()));
    if (p.source.size() == 1) EXPECT_EQ(p.target, p.source);
  }
  const auto one = gen_reverse_strings(50, 3, "abc", 4, 3);
  for (const auto& p : one.pairs) EXPECT_EQ(p.source.size(), 3u);
  EXPECT_THROW(gen_reverse_strings(5, 3, "", 0), ConfigError);
  EXPECT_THROW(gen_reverse_strings(5, 0, "ab", 0), ConfigError);
}

TEST(ReverseStrings, EnumerationMatchesBruteForce) {
  const auto ds = enumerate_reverse_strings(3, "ab");
  std::set<std::string> got;
  for (const auto& p : ds.pairs) {
    got.insert(p.source);
    EXPECT_EQ(p.target, std::string(p.source.rbegin(), p.source.rend()));
  }
  std::set<std::string> want;
  for (int len = 1; len <= 3; ++len)
    for (int bits = 0; bits < (1 << len); ++bits) {
      std::string s;
      for (int i = len - 1; i >= 0; --i) s += (bits >> i) & 1 ? 'b' : 'a';
      want.insert(s);
    }
  EXPECT_EQ(ds.size(), 14u);
  EXPECT_EQ(got, want);
  EXPECT_EQ(ds.pairs.front().source, "a");
  EXPECT_EQ(ds.pairs.back().source, "bbb");
}

TEST(ReverseStrings, UnseenSplitAvoidsExcludedStrings) {
  const auto train = gen_reverse_strings(200, 5, "abcd", 1);
  const auto test = gen_reverse_strings_unseen(300, train, 2);
  std::set<std::string> seen;
  for (const auto& p : train.pairs) seen.insert(p.source);
  std::set<std::string> mine;
  for (const auto& p : test.pairs) {
    EXPECT_FALSE(seen.count(p.source)) << p.source;
    EXPECT_TRUE(mine.insert(p.source).second);
  }
  // Every string of length <= 2 over {a, b} is excluded, so no draw succeeds.
  const auto all = enumerate_reverse_strings(2, "ab");
  EXPECT_THROW(gen_reverse_strings_unseen(1, all, 3), ConfigError);
}

TEST(SeqEncoding, LmLayoutAndTargets) {
  SeqDataset ds{"abc", 3, {{"ab", "ba"}, {"c", "c"}}};
  const std::size_t idx[] = {0, 1};
  const auto lay = encode_lm(ds, idx);
  ASSERT_EQ(lay.len, 9u);
  const std::vector<std::int32_t> t0{1, 4, 5, 3, 5, 4, 2, 0, 0};
  EXPECT_EQ(std::vector<std::int32_t>(lay.tokens.begin(), lay.tokens.begin() + 9), t0);
  // Targets: predict "b", "a", EOS after SEP, "b", "a".
  const std::vector<std::int32_t> g0{-1, -1, -1, 5, 4, 2, -1, -1, -1};
  EXPECT_EQ(std::vector<std::int32_t>(lay.targets.begin(), lay.targets.begin() + 9), g0);
  const std::vector<std::int32_t> g1{-1, -1, 6, 2, -1, -1, -1, -1, -1};
  EXPECT_EQ(std::vector<std::int32_t>(lay.targets.begin() + 9, lay.targets.end()), g1);
}

TEST(SeqEncoding, Seq2SeqLayout) {
  SeqDataset ds{"abc", 3, {{"ab", "ba"}}};
  const std::size_t idx[] = {0};
  const auto lay = encode_seq2seq(ds, idx);
  EXPECT_EQ(lay.src, (std::vector<std::int32_t>{4, 5, 0}));
  EXPECT_EQ(lay.tgt_in, (std::vector<std::int32_t>{1, 5, 4, 0}));
  EXPECT_EQ(lay.targets, (std::vector<std::int32_t>{5, 4, 2, -1}));
  SeqVocab v{"abc"};
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.chr(v.id('c')), 'c');
  EXPECT_THROW(v.id('z'), DimensionError);
}

}  // namespace
}  // namespace dat
