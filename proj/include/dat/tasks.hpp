// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dat/random.hpp"

namespace dat {

enum class GridTaskKind { SameDifferent, MatchPattern };
const char* to_string(GridTaskKind k);

// Procedurally drawn p x p x C u8 patches, pairwise distinct and never empty.
struct GlyphSet {
  std::size_t patch = 0, channels = 0;
  std::vector<std::vector<std::uint8_t>> glyphs;

  std::size_t size() const { return glyphs.size(); }
};

GlyphSet make_glyphs(std::size_t count, std::size_t patch, std::size_t channels, std::uint64_t seed);

struct GridTaskOptions {
  std::size_t grid = 3;
  std::size_t patch = 12;
  std::size_t channels = 3;
  std::size_t n_glyphs = 16;      // size of the glyph inventory
  std::uint64_t glyph_seed = 1;   // the inventory is shared by every split
  // When > 0, glyphs [n_glyphs - holdout_glyphs, n_glyphs) are reserved for
  // out-of-vocabulary splits and never appear in in-vocabulary ones.
  std::size_t holdout_glyphs = 0;
};

// Images are [count, H, W, C] u8, row-major; labels are 0/1.
struct ImageDataset {
  GridTaskKind kind = GridTaskKind::SameDifferent;
  std::size_t height = 0, width = 0, channels = 0, patch = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return height * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_bytes(), image_bytes()};
  }
  // Samples [0, n) as a new dataset.
  ImageDataset prefix(std::size_t n) const;
};

// Which glyphs a split may draw from.
enum class GlyphPool { InVocabulary, Holdout };

ImageDataset gen_same_different(std::size_t n_samples, std::uint64_t seed, const GridTaskOptions& opt = {},
                                GlyphPool pool = GlyphPool::InVocabulary);
ImageDataset gen_match_pattern(std::size_t n_samples, std::uint64_t seed, const GridTaskOptions& opt = {},
                               GlyphPool pool = GlyphPool::InVocabulary);
ImageDataset gen_grid_task(GridTaskKind kind, std::size_t n_samples, std::uint64_t seed,
                           const GridTaskOptions& opt = {}, GlyphPool pool = GlyphPool::InVocabulary);

// Rule oracles: recompute a label from raw pixels alone.
std::int32_t same_different_rule(std::span<const std::uint8_t> image, std::size_t grid, std::size_t patch,
                                 std::size_t channels);
std::int32_t match_pattern_rule(std::span<const std::uint8_t> image, std::size_t grid, std::size_t patch,
                                std::size_t channels);

// Equality-pattern class of a triple: 0 ABA, 1 ABB, 2 AAB, 3 ABC, 4 AAA.
int pattern_class(int a, int b, int c);

// ---- strings -------------------------------------------------------------

struct SeqPair {
  std::string source, target;
};

struct SeqDataset {
  std::string alphabet;
  std::size_t max_len = 0;
  std::vector<SeqPair> pairs;

  std::size_t size() const { return pairs.size(); }
};

// Lengths uniform in [min_len, max_len]; target = reverse(source).
SeqDataset gen_reverse_strings(std::size_t n_samples, std::size_t max_len, const std::string& alphabet,
                               std::uint64_t seed, std::size_t min_len = 1);

// Like gen_reverse_strings over exclude's alphabet and max_len, but every
// source is new: absent from exclude and distinct within the result.
SeqDataset gen_reverse_strings_unseen(std::size_t n_samples, const SeqDataset& exclude, std::uint64_t seed,
                                      std::size_t min_len = 1);

// Every (source, reverse) pair with 1 <= length <= max_len, in
// length-then-lexicographic order.
SeqDataset enumerate_reverse_strings(std::size_t max_len, const std::string& alphabet);

// Token layout for the character models.
struct SeqVocab {
  static constexpr std::int32_t kPad = 0, kBos = 1, kEos = 2, kSep = 3, kFirstChar = 4;
  std::string alphabet;

  std::size_t size() const { return kFirstChar + alphabet.size(); }
  std::int32_t id(char c) const;
  char chr(std::int32_t id) const;
};

// Decoder-only layout BOS src SEP tgt EOS, right-padded with PAD to
// 2 * max_len + 3. targets[t] is the token at t + 1 when it belongs to the
// target or the closing EOS, otherwise -1 (ignored).
struct LmBatchLayout {
  std::size_t len = 0;
  std::vector<std::int32_t> tokens, targets;
};
LmBatchLayout encode_lm(const SeqDataset& ds, std::span<const std::size_t> idx);

// Encoder-decoder layout: source padded to max_len, decoder input BOS tgt
// padded to max_len + 1, targets tgt EOS padded with -1.
struct Seq2SeqBatchLayout {
  std::size_t src_len = 0, tgt_len = 0;
  std::vector<std::int32_t> src, tgt_in, targets;
};
Seq2SeqBatchLayout encode_seq2seq(const SeqDataset& ds, std::span<const std::size_t> idx);

}  // namespace dat
