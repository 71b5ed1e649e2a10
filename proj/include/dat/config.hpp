// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dat {

enum class SymbolKind { Positional, PositionRelative, SymbolicAttention };
enum class PosEncoding { None, Learned, Sinusoidal, RoPE };
// Payload of the relational heads. Rca drops the relation term and routes
// symbols only.
enum class RelVariant { Relational, Rca };
enum class Activation { ReLU, GeLU, SwiGLU };
enum class NormKind { LayerNorm, RMSNorm };
enum class NormPlacement { Pre, Post };
enum class Arch { EncoderOnly, DecoderOnly, EncoderDecoder, VisionEncoder };
enum class Pooling { Mean, CLS };

const char* to_string(SymbolKind v);
const char* to_string(PosEncoding v);
const char* to_string(RelVariant v);
const char* to_string(Activation v);
const char* to_string(NormKind v);
const char* to_string(NormPlacement v);
const char* to_string(Arch v);
const char* to_string(Pooling v);

struct DualAttnConfig {
  std::size_t d_model = 64;
  std::size_t n_h_sa = 2;
  std::size_t n_h_ra = 2;
  std::size_t d_r = 4;
  bool symmetric_relations = false;
  // Total key/value heads across both head types; 0 means one per query head.
  std::size_t n_kv_heads = 0;
  PosEncoding pos_encoding = PosEncoding::None;
  double rope_base = 10000.0;
  RelVariant rel_variant = RelVariant::Relational;
  double dropout = 0.0;

  std::size_t n_heads() const { return n_h_sa + n_h_ra; }
  std::size_t d_head() const { return d_model / n_heads(); }
  std::size_t d_key() const { return d_head(); }
  std::size_t d_proj() const { return n_h_ra ? d_head() * n_h_ra / d_r : 0; }
  std::size_t kv_heads_total() const { return n_kv_heads ? n_kv_heads : n_heads(); }
  std::size_t kv_sa() const { return kv_heads_total() * n_h_sa / n_heads(); }
  std::size_t kv_ra() const { return kv_heads_total() * n_h_ra / n_heads(); }

  // Throws ConfigError on any inconsistency.
  void validate() const;
};

struct SymbolConfig {
  SymbolKind kind = SymbolKind::Positional;
  std::size_t max_len = 64;      // Positional
  std::size_t max_rel = 8;       // PositionRelative: Delta
  std::size_t n_symbols = 16;    // SymbolicAttention: n_s
  std::size_t n_sym_heads = 1;   // SymbolicAttention

  void validate(std::size_t d_model) const;
};

struct ModelConfig {
  Arch arch = Arch::EncoderOnly;
  std::size_t n_layers = 2;
  DualAttnConfig attn;
  SymbolConfig symbols;
  std::size_t d_ff = 256;
  Activation activation = Activation::GeLU;
  NormKind norm = NormKind::LayerNorm;
  NormPlacement norm_placement = NormPlacement::Pre;
  bool bias = true;

  // Token architectures.
  std::size_t vocab = 0;
  std::size_t max_len = 64;
  std::int32_t pad_id = -1;  // -1: no padding id
  bool tie_embeddings = false;

  // Classifier heads (EncoderOnly, VisionEncoder).
  std::size_t n_classes = 2;
  Pooling pooling = Pooling::Mean;

  // VisionEncoder geometry.
  std::size_t image_h = 0, image_w = 0, channels = 0, patch = 0;
  bool learned_pos_emb = false;

  std::uint64_t seed = 0;

  std::size_t n_patches() const { return patch ? (image_h / patch) * (image_w / patch) : 0; }
  bool has_relational() const { return attn.n_h_ra > 0; }
  void validate() const;
};

}  // namespace dat
