// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "bytes.hpp"
#include "dat/checkpoint.hpp"
#include "dat/config_io.hpp"

namespace dat {
namespace {

ModelConfig small_lm(bool symmetric = false) {
  ModelConfig c;
  c.arch = Arch::DecoderOnly;
  c.n_layers = 2;
  c.attn.d_model = 16;
  c.attn.n_h_sa = 2;
  c.attn.n_h_ra = 2;
  c.attn.d_r = 4;
  c.attn.symmetric_relations = symmetric;
  c.d_ff = 24;
  c.vocab = 9;
  c.max_len = 10;
  c.symbols.max_len = 10;
  c.seed = 3;
  return c;
}

ModelInput tokens(std::vector<std::int32_t> ids) {
  ModelInput in;
  in.batch = 1;
  in.len = ids.size();
  in.tokens = std::move(ids);
  return in;
}

template <typename T>
void expect_bit_identical(const Model<T>& a, const Model<T>& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    ASSERT_EQ(pa[i].tensor.shape(), pb[i].tensor.shape());
    EXPECT_EQ(std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(), pa[i].tensor.numel() * sizeof(T)), 0)
        << pa[i].name;
  }
  EXPECT_EQ(to_json(a.config()).dump(), to_json(b.config()).dump());
}

void reseal(std::vector<std::uint8_t>& b) {
  const auto c = bytes::Writer::crc(b.data(), b.size() - 4);
  std::memcpy(b.data() + b.size() - 4, &c, 4);
}

TEST(Checkpoint, RoundTripIsBitExactInBothDtypes) {
  for (auto arch : {Arch::EncoderOnly, Arch::DecoderOnly, Arch::EncoderDecoder}) {
    auto c = small_lm();
    c.arch = arch;
    c.symbols.kind = SymbolKind::SymbolicAttention;
    c.symbols.n_symbols = 4;
    const Model<float> f(c);
    expect_bit_identical(f, decode_checkpoint<float>(encode_checkpoint(f)));
    const Model<double> d(c);
    expect_bit_identical(d, decode_checkpoint<double>(encode_checkpoint(d)));
  }
}

TEST(Checkpoint, FileRoundTripAndConfigPeek) {
  const auto path = (std::filesystem::temp_directory_path() / "dat_test_model.ckpt").string();
  const Model<float> m(small_lm());
  save_checkpoint(m, path);
  expect_bit_identical(m, load_checkpoint<float>(path));
  EXPECT_EQ(to_json(checkpoint_config(path)).dump(), to_json(m.config()).dump());
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<float>(path), IoError);
}

TEST(Checkpoint, LargeHeadConfigRoundTrips) {
  // 8 + 8 heads, d_r = 64, 4 shared key/value heads; one layer keeps it small.
  ModelConfig c = small_lm();
  c.n_layers = 1;
  c.attn.d_model = 1024;
  c.attn.n_h_sa = 8;
  c.attn.n_h_ra = 8;
  c.attn.d_r = 64;
  c.attn.n_kv_heads = 4;
  c.attn.pos_encoding = PosEncoding::RoPE;
  c.symbols.kind = SymbolKind::SymbolicAttention;
  c.symbols.n_symbols = 8;
  c.d_ff = 64;
  c.activation = Activation::SwiGLU;
  c.norm = NormKind::RMSNorm;
  c.bias = false;
  const Model<float> m(c);
  const auto back = decode_checkpoint<float>(encode_checkpoint(m));
  expect_bit_identical(m, back);
  EXPECT_EQ(back.config().attn.kv_sa(), 2u);
  EXPECT_EQ(back.config().attn.kv_ra(), 2u);
}

TEST(Checkpoint, RandomizedManifestFuzz) {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    Container c;
    c.config = "{\"trial\": " + std::to_string(trial) + "}";
    const std::size_t n = rng.below(6);
    for (std::size_t k = 0; k < n; ++k) {
      TensorRecord t;
      t.name = "t" + std::to_string(k) + std::string(rng.below(4), 'x');
      t.dtype = rng.below(2) ? DType::f64 : DType::f32;
      const std::size_t rank = rng.below(9);
      std::size_t numel = 1;
      for (std::size_t r = 0; r < rank; ++r) {
        t.shape.push_back(rng.below(rank > 4 ? 2 : 4));  // zero-sized dims included
        numel *= t.shape.back();
      }
      t.bytes.resize(numel * (t.dtype == DType::f64 ? 8 : 4));
      for (auto& b : t.bytes) b = static_cast<std::uint8_t>(rng.below(256));
      c.tensors.push_back(std::move(t));
    }
    const auto back = decode_container(encode_container(c));
    EXPECT_EQ(back.config, c.config);
    ASSERT_EQ(back.tensors.size(), c.tensors.size());
    for (std::size_t k = 0; k < n; ++k) {
      EXPECT_EQ(back.tensors[k].name, c.tensors[k].name);
      EXPECT_EQ(back.tensors[k].dtype, c.tensors[k].dtype);
      EXPECT_EQ(back.tensors[k].shape, c.tensors[k].shape);
      EXPECT_EQ(back.tensors[k].bytes, c.tensors[k].bytes);
    }
  }
}

TEST(Checkpoint, FlippedChecksumByteIsIntegrityError) {
  auto b = encode_checkpoint(Model<float>(small_lm()));
  for (std::size_t k = 1; k <= 4; ++k) {
    auto bad = b;
    bad[bad.size() - k] ^= 0x01;
    EXPECT_THROW(decode_checkpoint<float>(bad), IntegrityError);
  }
  auto blob = b;
  blob[blob.size() - 10] ^= 0x80;  // inside the last tensor
  EXPECT_THROW(decode_checkpoint<float>(blob), IntegrityError);
}

TEST(Checkpoint, HeaderAndTruncationErrors) {
  const auto good = encode_checkpoint(Model<float>(small_lm()));
  auto magic = good;
  magic[1] = 'x';
  EXPECT_THROW(decode_checkpoint<float>(magic), IoError);
  auto version = good;
  version[8] = 2;
  reseal(version);
  try {
    decode_checkpoint<float>(version);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  for (std::size_t keep : {std::size_t{5}, std::size_t{40}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> t(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_ANY_THROW(decode_checkpoint<float>(t)) << keep;
    try {
      decode_checkpoint<float>(t);
    } catch (const Error& e) {
      EXPECT_TRUE(std::string(e.category()) == "io" || std::string(e.category()) == "integrity") << e.category();
    }
  }
}

TEST(Checkpoint, OverlappingExtentsRejected) {
  Container c;
  c.config = "{}";
  c.tensors.push_back({"a", DType::f32, {2}, std::vector<std::uint8_t>(8, 1)});
  c.tensors.push_back({"b", DType::f32, {2}, std::vector<std::uint8_t>(8, 2)});
  auto b = encode_container(c);
  // The second manifest entry's offset (8) sits 16 bytes before the blob size
  // field; point it at 4 so it overlaps the first tensor.
  const std::size_t blob_size_at = b.size() - 4 - 16 - 8;
  std::uint64_t off;
  std::memcpy(&off, b.data() + blob_size_at - 16, 8);
  ASSERT_EQ(off, 8u);
  off = 4;
  std::memcpy(b.data() + blob_size_at - 16, &off, 8);
  reseal(b);
  EXPECT_THROW(decode_container(b), IoError);
}

// Re-encodes a checkpoint with one edit applied to its container.
template <typename Edit>
std::vector<std::uint8_t> edited(const Model<float>& m, Edit edit) {
  auto c = decode_container(encode_checkpoint(m));
  edit(c);
  return encode_container(c);
}

TEST(Checkpoint, ManifestMustMatchTheModel) {
  const Model<float> m(small_lm());
  auto drop = edited(m, [](Container& c) { c.tensors.pop_back(); });
  EXPECT_THROW(decode_checkpoint<float>(drop), IntegrityError);
  auto extra = edited(m, [](Container& c) { c.tensors.push_back({"layer.9.bogus", DType::f32, {1}, {0, 0, 0, 0}}); });
  try {
    decode_checkpoint<float>(extra);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.9.bogus"), std::string::npos);
  }
  auto dup = edited(m, [](Container& c) { c.tensors.push_back(c.tensors.front()); });
  EXPECT_THROW(decode_checkpoint<float>(dup), IntegrityError);
  auto shape = edited(m, [](Container& c) {
    auto& t = c.tensors.front();
    std::swap(t.shape.front(), t.shape.back());
    if (t.shape.front() == t.shape.back()) t.shape = {t.bytes.size() / 4};
  });
  EXPECT_THROW(decode_checkpoint<float>(shape), IntegrityError);
  // f32 file loaded as f64.
  EXPECT_THROW(decode_checkpoint<double>(encode_checkpoint(m)), IntegrityError);
  auto cfg = edited(m, [](Container& c) { c.config = "{not json"; });
  EXPECT_THROW(decode_checkpoint<float>(cfg), IoError);
}

// ---- relation export ---------------------------------------------------------

struct Csv {
  std::size_t n = 0;
  std::vector<double> raw, squashed;
};

Csv parse_relations(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "i,j,raw,tanh");
  Csv out;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::size_t i, j;
    double raw, th;
    EXPECT_EQ(std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf", &i, &j, &raw, &th), 4);
    out.raw.push_back(raw);
    out.squashed.push_back(th);
    EXPECT_DOUBLE_EQ(th, std::tanh(raw));
    out.n = std::max(out.n, i + 1);
    ++rows;
  }
  EXPECT_EQ(rows, out.n * out.n);
  return out;
}

std::string export_text(const Model<double>& m, const ModelInput& in, std::size_t layer, std::size_t dim) {
  std::ostringstream o;
  export_relations(m, in, layer, dim, o);
  return o.str();
}

TEST(Export, ShapeAndDeterminism) {
  auto c = small_lm();
  c.arch = Arch::EncoderOnly;
  const Model<double> m(c);
  for (std::size_t n : {1, 3, 7}) {
    std::vector<std::int32_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::int32_t>(i + 1);
    const auto a = export_text(m, tokens(ids), 1, 2);
    EXPECT_EQ(parse_relations(a).n, n);
    EXPECT_EQ(a, export_text(m, tokens(ids), 1, 2));
    // Through a checkpoint round trip as well.
    const auto back = decode_checkpoint<double>(encode_checkpoint(m));
    EXPECT_EQ(a, export_text(back, tokens(ids), 1, 2));
  }
}

TEST(Export, SymmetricRelationsGiveSymmetricMatrix) {
  auto c = small_lm(true);
  c.arch = Arch::EncoderOnly;
  const Model<double> m(c);
  const auto in = tokens({1, 4, 2, 8, 5, 3});
  for (std::size_t layer : {0, 1}) {
    const auto csv = parse_relations(export_text(m, in, layer, 1));
    for (std::size_t i = 0; i < csv.n; ++i)
      for (std::size_t j = 0; j < csv.n; ++j) EXPECT_EQ(csv.raw[i * csv.n + j], csv.raw[j * csv.n + i]);
  }
}

TEST(Export, DuplicatedTokensRelateIdentically) {
  // Layer 0 sees token embeddings only (no positional term is added to the
  // residual stream), so equal tokens i, j give r_ii == r_ij under symmetric
  // relation maps.
  auto c = small_lm(true);
  c.arch = Arch::EncoderOnly;
  const Model<double> m(c);
  const auto in = tokens({6, 2, 6, 7});
  for (std::size_t dim = 0; dim < 4; ++dim) {
    const auto csv = parse_relations(export_text(m, in, 0, dim));
    EXPECT_NEAR(csv.raw[0 * 4 + 0], csv.raw[0 * 4 + 2], 1e-12);
    EXPECT_NEAR(csv.raw[2 * 4 + 2], csv.raw[0 * 4 + 0], 1e-12);
    EXPECT_NEAR(csv.raw[1 * 4 + 0], csv.raw[1 * 4 + 2], 1e-12);
  }
}

TEST(Export, Errors) {
  auto c = small_lm();
  c.arch = Arch::EncoderOnly;
  c.n_layers = 1;
  const Model<double> m(c);
  EXPECT_THROW(export_text(m, tokens({1, 2}), 0, 4), DimensionError);
  EXPECT_THROW(export_text(m, tokens({1, 2}), 1, 0), DimensionError);
  c.attn.n_h_sa = 4;
  c.attn.n_h_ra = 0;
  const Model<double> plain(c);
  EXPECT_THROW(export_text(plain, tokens({1, 2}), 0, 0), ConfigError);
}

}  // namespace
}  // namespace dat
