// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "dat/tensor.hpp"

namespace dat {

const char* to_string(GridTaskKind k) {
  switch (k) {
    case GridTaskKind::SameDifferent: return "same_different";
    case GridTaskKind::MatchPattern: return "match_pattern";
  }
  return "?";
}

namespace {

using Mask = std::vector<std::uint8_t>;

bool inside_polygon(double x, double y, const std::vector<std::pair<double, double>>& v) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const auto [xi, yi] = v[i];
    const auto [xj, yj] = v[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

Mask draw_polygon(std::size_t p, Rng& rng) {
  const std::size_t k = 3 + rng.below(4);
  const double c = (static_cast<double>(p) - 1) / 2;
  std::vector<double> angles(k);
  for (auto& a : angles) a = rng.uniform(0, 2 * M_PI);
  std::sort(angles.begin(), angles.end());
  std::vector<std::pair<double, double>> v;
  for (double a : angles) {
    const double r = rng.uniform(0.35, 0.5) * static_cast<double>(p);
    v.emplace_back(c + r * std::cos(a), c + r * std::sin(a));
  }
  Mask m(p * p, 0);
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p; ++x)
      m[y * p + x] = inside_polygon(static_cast<double>(x), static_cast<double>(y), v);
  return m;
}

Mask draw_ellipse(std::size_t p, Rng& rng) {
  const double c = (static_cast<double>(p) - 1) / 2;
  const double rx = rng.uniform(0.2, 0.5) * static_cast<double>(p), ry = rng.uniform(0.2, 0.5) * static_cast<double>(p);
  const bool ring = rng.bernoulli(0.4);
  Mask m(p * p, 0);
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p; ++x) {
      const double dx = (static_cast<double>(x) - c) / rx, dy = (static_cast<double>(y) - c) / ry;
      const double r2 = dx * dx + dy * dy;
      m[y * p + x] = ring ? (r2 <= 1.0 && r2 >= 0.45) : r2 <= 1.0;
    }
  return m;
}

// A few thick straight strokes between random border points.
Mask draw_strokes(std::size_t p, Rng& rng) {
  const std::size_t k = 1 + rng.below(3);
  Mask m(p * p, 0);
  const double hi = static_cast<double>(p) - 1;
  for (std::size_t s = 0; s < k; ++s) {
    const double x0 = rng.uniform(0, hi), y0 = rng.uniform(0, hi), x1 = rng.uniform(0, hi), y1 = rng.uniform(0, hi);
    const double len = std::max(std::hypot(x1 - x0, y1 - y0), 1e-9);
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x) {
        const double px = static_cast<double>(x) - x0, py = static_cast<double>(y) - y0;
        const double t = std::clamp((px * (x1 - x0) + py * (y1 - y0)) / (len * len), 0.0, 1.0);
        const double dx = px - t * (x1 - x0), dy = py - t * (y1 - y0);
        if (dx * dx + dy * dy <= 1.3) m[y * p + x] = 1;
      }
  }
  return m;
}

Mask draw_blocks(std::size_t p, Rng& rng) {
  const std::size_t cell = std::max<std::size_t>(1, p / 4);
  Mask m(p * p, 0);
  for (std::size_t by = 0; by < p; by += cell)
    for (std::size_t bx = 0; bx < p; bx += cell) {
      if (!rng.bernoulli(0.45)) continue;
      for (std::size_t y = by; y < std::min(p, by + cell); ++y)
        for (std::size_t x = bx; x < std::min(p, bx + cell); ++x) m[y * p + x] = 1;
    }
  return m;
}

std::size_t count_differences(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

std::vector<std::size_t> glyph_pool(const GridTaskOptions& opt, GlyphPool pool) {
  if (opt.holdout_glyphs >= opt.n_glyphs) throw ConfigError("holdout_glyphs must be smaller than n_glyphs");
  const std::size_t split = opt.n_glyphs - opt.holdout_glyphs;
  std::vector<std::size_t> ids;
  if (pool == GlyphPool::InVocabulary) {
    for (std::size_t g = 0; g < split; ++g) ids.push_back(g);
  } else {
    if (!opt.holdout_glyphs) throw ConfigError("holdout split requested but holdout_glyphs is 0");
    for (std::size_t g = split; g < opt.n_glyphs; ++g) ids.push_back(g);
  }
  return ids;
}

ImageDataset empty_dataset(GridTaskKind kind, std::size_t n, const GridTaskOptions& opt) {
  ImageDataset ds;
  ds.kind = kind;
  ds.height = ds.width = opt.grid * opt.patch;
  ds.channels = opt.channels;
  ds.patch = opt.patch;
  ds.pixels.assign(n * ds.image_bytes(), 0);
  ds.labels.assign(n, 0);
  return ds;
}

void place(ImageDataset& ds, std::size_t sample, std::size_t cell, const std::vector<std::uint8_t>& glyph,
           std::size_t grid) {
  const std::size_t p = ds.patch, c = ds.channels, row0 = (cell / grid) * p, col0 = (cell % grid) * p;
  std::uint8_t* img = ds.pixels.data() + sample * ds.image_bytes();
  for (std::size_t y = 0; y < p; ++y)
    std::copy_n(glyph.data() + y * p * c, p * c, img + ((row0 + y) * ds.width + col0) * c);
}

// Labels 0/1 in exactly balanced counts (the odd one out is random), shuffled.
std::vector<std::int32_t> balanced_labels(std::size_t n, Rng& rng) {
  std::vector<std::int32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::int32_t>(i % 2);
  if (n % 2) labels[n - 1] = static_cast<std::int32_t>(rng.below(2));
  rng.shuffle(labels.begin(), labels.end());
  return labels;
}

// Cell contents as glyph identities by byte equality; -1 for an empty cell.
std::vector<int> cell_identities(std::span<const std::uint8_t> image, std::size_t grid, std::size_t patch,
                                 std::size_t channels) {
  const std::size_t w = grid * patch, cells = grid * grid, bytes = patch * patch * channels;
  if (image.size() != w * w * channels) throw DimensionError("image size does not match the grid geometry");
  std::vector<std::vector<std::uint8_t>> seen;
  std::vector<int> ids(cells, -1);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    std::vector<std::uint8_t> patch_bytes;
    patch_bytes.reserve(bytes);
    const std::size_t r0 = (cell / grid) * patch, c0 = (cell % grid) * patch;
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch * channels; ++x)
        patch_bytes.push_back(image[((r0 + y) * w) * channels + c0 * channels + x]);
    if (std::all_of(patch_bytes.begin(), patch_bytes.end(), [](std::uint8_t b) { return b == 0; })) continue;
    auto it = std::find(seen.begin(), seen.end(), patch_bytes);
    if (it == seen.end()) {
      seen.push_back(std::move(patch_bytes));
      ids[cell] = static_cast<int>(seen.size() - 1);
    } else {
      ids[cell] = static_cast<int>(it - seen.begin());
    }
  }
  return ids;
}

}  // namespace

GlyphSet make_glyphs(std::size_t count, std::size_t patch, std::size_t channels, std::uint64_t seed) {
  if (count < 1 || patch < 2 || channels < 1) throw ConfigError("glyph set needs count >= 1, patch >= 2, channels >= 1");
  Rng rng(Rng::derive(seed, 0x61797068));
  GlyphSet set;
  set.patch = patch;
  set.channels = channels;
  const std::size_t min_area = std::max<std::size_t>(2, patch * patch / 8);
  const std::size_t min_diff = std::max<std::size_t>(1, patch * patch * channels / 10);
  std::size_t attempts = 0;
  while (set.glyphs.size() < count) {
    if (++attempts > 1000 * count) throw ConfigError("could not draw enough distinct glyphs at this patch size");
    Mask m;
    switch (rng.below(4)) {
      case 0: m = draw_polygon(patch, rng); break;
      case 1: m = draw_ellipse(patch, rng); break;
      case 2: m = draw_strokes(patch, rng); break;
      default: m = draw_blocks(patch, rng); break;
    }
    if (static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)) < min_area) continue;
    std::vector<std::uint8_t> color(channels);
    for (auto& c : color) c = static_cast<std::uint8_t>(64 + rng.below(192));
    std::vector<std::uint8_t> g(patch * patch * channels, 0);
    for (std::size_t i = 0; i < patch * patch; ++i)
      if (m[i])
        for (std::size_t c = 0; c < channels; ++c) g[i * channels + c] = color[c];
    bool distinct = true;
    for (const auto& other : set.glyphs) distinct &= count_differences(g, other) >= min_diff;
    if (distinct) set.glyphs.push_back(std::move(g));
  }
  return set;
}

ImageDataset ImageDataset::prefix(std::size_t n) const {
  if (n > size()) throw DimensionError("prefix of " + std::to_string(n) + " from a dataset of " + std::to_string(size()));
  ImageDataset out = *this;
  out.pixels.resize(n * image_bytes());
  out.labels.resize(n);
  return out;
}

ImageDataset gen_same_different(std::size_t n_samples, std::uint64_t seed, const GridTaskOptions& opt,
                                GlyphPool pool) {
  if (n_samples < 2) throw ConfigError("same_different needs at least 2 samples");
  const auto ids = glyph_pool(opt, pool);
  if (ids.size() < 2) throw ConfigError("same_different needs an object vocabulary of at least 2 glyphs");
  if (opt.grid * opt.grid < 2) throw ConfigError("grid must have at least 2 cells");
  const auto glyphs = make_glyphs(opt.n_glyphs, opt.patch, opt.channels, opt.glyph_seed);
  Rng rng(seed);
  auto ds = empty_dataset(GridTaskKind::SameDifferent, n_samples, opt);
  ds.labels = balanced_labels(n_samples, rng);
  const std::size_t cells = opt.grid * opt.grid;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t c1 = rng.below(cells);
    std::size_t c2 = rng.below(cells - 1);
    if (c2 >= c1) ++c2;
    const std::size_t a = rng.below(ids.size());
    std::size_t b = a;
    if (!ds.labels[s]) {
      b = rng.below(ids.size() - 1);
      if (b >= a) ++b;
    }
    place(ds, s, c1, glyphs.glyphs[ids[a]], opt.grid);
    place(ds, s, c2, glyphs.glyphs[ids[b]], opt.grid);
  }
  return ds;
}

int pattern_class(int a, int b, int c) {
  if (a == b && b == c) return 4;
  if (a == c) return 0;
  if (b == c) return 1;
  if (a == b) return 2;
  return 3;
}

ImageDataset gen_match_pattern(std::size_t n_samples, std::uint64_t seed, const GridTaskOptions& opt,
                               GlyphPool pool) {
  if (n_samples < 2) throw ConfigError("match_pattern needs at least 2 samples");
  if (opt.grid != 3) throw ConfigError("match_pattern is defined on a 3x3 grid");
  const auto ids = glyph_pool(opt, pool);
  if (ids.size() < 3) throw ConfigError("match_pattern needs an object vocabulary of at least 3 glyphs");
  const auto glyphs = make_glyphs(opt.n_glyphs, opt.patch, opt.channels, opt.glyph_seed);
  Rng rng(seed);
  auto ds = empty_dataset(GridTaskKind::MatchPattern, n_samples, opt);
  ds.labels = balanced_labels(n_samples, rng);
  auto draw_row = [&](int cls, std::size_t sample, std::size_t first_cell) {
    // Three distinct glyphs, then the class picks which slots repeat.
    std::vector<std::size_t> pick(ids.size());
    std::iota(pick.begin(), pick.end(), 0);
    for (std::size_t i = 0; i < 3; ++i) std::swap(pick[i], pick[i + rng.below(pick.size() - i)]);
    const std::size_t A = ids[pick[0]], B = ids[pick[1]], C = ids[pick[2]];
    const std::size_t row[4][3] = {{A, B, A}, {A, B, B}, {A, A, B}, {A, B, C}};
    for (std::size_t k = 0; k < 3; ++k) place(ds, sample, first_cell + k, glyphs.glyphs[row[cls][k]], 3);
  };
  for (std::size_t s = 0; s < n_samples; ++s) {
    const int top = static_cast<int>(rng.below(4));
    int bottom = top;
    if (!ds.labels[s]) {
      bottom = static_cast<int>(rng.below(3));
      if (bottom >= top) ++bottom;
    }
    draw_row(top, s, 0);
    draw_row(bottom, s, 6);
  }
  return ds;
}

ImageDataset gen_grid_task(GridTaskKind kind, std::size_t n_samples, std::uint64_t seed, const GridTaskOptions& opt,
                           GlyphPool pool) {
  return kind == GridTaskKind::SameDifferent ? gen_same_different(n_samples, seed, opt, pool)
                                             : gen_match_pattern(n_samples, seed, opt, pool);
}

std::int32_t same_different_rule(std::span<const std::uint8_t> image, std::size_t grid, std::size_t patch,
                                 std::size_t channels) {
  std::vector<int> present;
  for (int id : cell_identities(image, grid, patch, channels))
    if (id >= 0) present.push_back(id);
  if (present.size() != 2) throw DimensionError("same_different image must hold exactly two objects");
  return present[0] == present[1];
}

std::int32_t match_pattern_rule(std::span<const std::uint8_t> image, std::size_t grid, std::size_t patch,
                                std::size_t channels) {
  if (grid != 3) throw DimensionError("match_pattern rule expects a 3x3 grid");
  const auto ids = cell_identities(image, grid, patch, channels);
  for (std::size_t c : {0u, 1u, 2u, 6u, 7u, 8u})
    if (ids[c] < 0) throw DimensionError("match_pattern image has an empty object cell");
  return pattern_class(ids[0], ids[1], ids[2]) == pattern_class(ids[6], ids[7], ids[8]);
}

// ---- strings -------------------------------------------------------------

SeqDataset gen_reverse_strings(std::size_t n_samples, std::size_t max_len, const std::string& alphabet,
                               std::uint64_t seed, std::size_t min_len) {
  if (max_len < 1) throw ConfigError("reverse_strings needs max_len >= 1");
  if (alphabet.empty()) throw ConfigError("reverse_strings needs a non-empty alphabet");
  if (min_len < 1 || min_len > max_len) throw ConfigError("reverse_strings needs 1 <= min_len <= max_len");
  Rng rng(seed);
  SeqDataset ds;
  ds.alphabet = alphabet;
  ds.max_len = max_len;
  ds.pairs.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::string src(len, ' ');
    for (auto& ch : src) ch = alphabet[rng.below(alphabet.size())];
    ds.pairs.push_back({src, std::string(src.rbegin(), src.rend())});
  }
  return ds;
}

SeqDataset gen_reverse_strings_unseen(std::size_t n_samples, const SeqDataset& exclude, std::uint64_t seed,
                                      std::size_t min_len) {
  if (exclude.max_len < 1 || exclude.alphabet.empty() || min_len < 1 || min_len > exclude.max_len)
    throw ConfigError("reverse_strings needs a non-empty alphabet and 1 <= min_len <= max_len");
  std::unordered_set<std::string> seen;
  for (const auto& p : exclude.pairs) seen.insert(p.source);
  Rng rng(seed);
  SeqDataset ds;
  ds.alphabet = exclude.alphabet;
  ds.max_len = exclude.max_len;
  std::size_t attempts = 0;
  while (ds.size() < n_samples) {
    if (++attempts > 1000 * (n_samples + 1))
      throw ConfigError("reverse_strings: too few strings outside the excluded set");
    const std::size_t len = min_len + rng.below(ds.max_len - min_len + 1);
    std::string src(len, ' ');
    for (auto& ch : src) ch = ds.alphabet[rng.below(ds.alphabet.size())];
    if (seen.insert(src).second) ds.pairs.push_back({src, std::string(src.rbegin(), src.rend())});
  }
  return ds;
}

SeqDataset enumerate_reverse_strings(std::size_t max_len, const std::string& alphabet) {
  if (max_len < 1) throw ConfigError("reverse_strings needs max_len >= 1");
  if (alphabet.empty()) throw ConfigError("reverse_strings needs a non-empty alphabet");
  SeqDataset ds;
  ds.alphabet = alphabet;
  ds.max_len = max_len;
  std::vector<std::string> level{""};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::string> next;
    for (const auto& prefix : level)
      for (char c : alphabet) next.push_back(prefix + c);
    for (const auto& s : next) ds.pairs.push_back({s, std::string(s.rbegin(), s.rend())});
    level = std::move(next);
  }
  return ds;
}

std::int32_t SeqVocab::id(char c) const {
  const auto pos = alphabet.find(c);
  if (pos == std::string::npos) throw DimensionError(std::string("character '") + c + "' is not in the alphabet");
  return kFirstChar + static_cast<std::int32_t>(pos);
}

char SeqVocab::chr(std::int32_t id) const {
  if (id < kFirstChar || static_cast<std::size_t>(id - kFirstChar) >= alphabet.size())
    throw DimensionError("token " + std::to_string(id) + " is not a character");
  return alphabet[static_cast<std::size_t>(id - kFirstChar)];
}

LmBatchLayout encode_lm(const SeqDataset& ds, std::span<const std::size_t> idx) {
  const SeqVocab vocab{ds.alphabet};
  LmBatchLayout out;
  out.len = 2 * ds.max_len + 3;
  out.tokens.assign(idx.size() * out.len, SeqVocab::kPad);
  out.targets.assign(idx.size() * out.len, -1);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& pr = ds.pairs.at(idx[b]);
    if (pr.source.size() > ds.max_len || pr.target.size() > ds.max_len)
      throw CapacityError("string longer than the dataset max_len");
    std::int32_t* t = out.tokens.data() + b * out.len;
    std::int32_t* y = out.targets.data() + b * out.len;
    std::size_t k = 0;
    t[k++] = SeqVocab::kBos;
    for (char c : pr.source) t[k++] = vocab.id(c);
    t[k++] = SeqVocab::kSep;
    const std::size_t first_target = k;
    for (char c : pr.target) t[k++] = vocab.id(c);
    t[k++] = SeqVocab::kEos;
    // Position k-1 predicts token k; supervise the target span and EOS.
    for (std::size_t pos = first_target; pos < k; ++pos) y[pos - 1] = t[pos];
  }
  return out;
}

Seq2SeqBatchLayout encode_seq2seq(const SeqDataset& ds, std::span<const std::size_t> idx) {
  const SeqVocab vocab{ds.alphabet};
  Seq2SeqBatchLayout out;
  out.src_len = ds.max_len;
  out.tgt_len = ds.max_len + 1;
  out.src.assign(idx.size() * out.src_len, SeqVocab::kPad);
  out.tgt_in.assign(idx.size() * out.tgt_len, SeqVocab::kPad);
  out.targets.assign(idx.size() * out.tgt_len, -1);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& pr = ds.pairs.at(idx[b]);
    if (pr.source.size() > ds.max_len || pr.target.size() > ds.max_len)
      throw CapacityError("string longer than the dataset max_len");
    for (std::size_t i = 0; i < pr.source.size(); ++i) out.src[b * out.src_len + i] = vocab.id(pr.source[i]);
    std::int32_t* in = out.tgt_in.data() + b * out.tgt_len;
    std::int32_t* y = out.targets.data() + b * out.tgt_len;
    in[0] = SeqVocab::kBos;
    for (std::size_t i = 0; i < pr.target.size(); ++i) {
      in[i + 1] = vocab.id(pr.target[i]);
      y[i] = in[i + 1];
    }
    y[pr.target.size()] = SeqVocab::kEos;
  }
  return out;
}

}  // namespace dat
