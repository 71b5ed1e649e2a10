// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <string_view>
#include <utility>

#include "dat/config_io.hpp"
#include "dat/tensor.hpp"
#include "json_fields.hpp"

namespace dat {

namespace {

using json_detail::Names;
using json_detail::name_of;

constexpr Names<SymbolKind, 3> kSymbolKinds{{{SymbolKind::Positional, "positional"},
                                             {SymbolKind::PositionRelative, "position_relative"},
                                             {SymbolKind::SymbolicAttention, "symbolic_attention"}}};
constexpr Names<PosEncoding, 4> kPosEncodings{{{PosEncoding::None, "none"},
                                               {PosEncoding::Learned, "learned"},
                                               {PosEncoding::Sinusoidal, "sinusoidal"},
                                               {PosEncoding::RoPE, "rope"}}};
constexpr Names<RelVariant, 2> kRelVariants{{{RelVariant::Relational, "relational"}, {RelVariant::Rca, "rca"}}};
constexpr Names<Activation, 3> kActivations{
    {{Activation::ReLU, "relu"}, {Activation::GeLU, "gelu"}, {Activation::SwiGLU, "swiglu"}}};
constexpr Names<NormKind, 2> kNorms{{{NormKind::LayerNorm, "layer_norm"}, {NormKind::RMSNorm, "rms_norm"}}};
constexpr Names<NormPlacement, 2> kPlacements{{{NormPlacement::Pre, "pre"}, {NormPlacement::Post, "post"}}};
constexpr Names<Arch, 4> kArchs{{{Arch::EncoderOnly, "encoder_only"},
                                 {Arch::DecoderOnly, "decoder_only"},
                                 {Arch::EncoderDecoder, "encoder_decoder"},
                                 {Arch::VisionEncoder, "vision_encoder"}}};
constexpr Names<Pooling, 2> kPoolings{{{Pooling::Mean, "mean"}, {Pooling::CLS, "cls"}}};

}  // namespace

const char* to_string(SymbolKind v) { return name_of(kSymbolKinds, v); }
const char* to_string(PosEncoding v) { return name_of(kPosEncodings, v); }
const char* to_string(RelVariant v) { return name_of(kRelVariants, v); }
const char* to_string(Activation v) { return name_of(kActivations, v); }
const char* to_string(NormKind v) { return name_of(kNorms, v); }
const char* to_string(NormPlacement v) { return name_of(kPlacements, v); }
const char* to_string(Arch v) { return name_of(kArchs, v); }
const char* to_string(Pooling v) { return name_of(kPoolings, v); }

void DualAttnConfig::validate() const {
  const std::size_t h = n_heads();
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (h == 0) throw ConfigError("need at least one attention head (n_h_sa + n_h_ra >= 1)");
  if (d_model % h != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(h) + " heads");
  if (n_h_ra && rel_variant == RelVariant::Relational) {
    if (d_r == 0) throw ConfigError("d_r must be positive");
    const std::size_t budget = d_head() * n_h_ra;
    if (budget < d_r)
      throw ConfigError("d_proj would be < 1: d_h*n_h_ra = " + std::to_string(budget) + " < d_r = " +
                        std::to_string(d_r));
    if (budget % d_r != 0)
      throw ConfigError("d_r = " + std::to_string(d_r) + " must divide d_h*n_h_ra = " + std::to_string(budget));
  }
  const std::size_t kv = kv_heads_total();
  if (kv > h || h % kv != 0)
    throw ConfigError("n_kv_heads " + std::to_string(kv) + " must divide the " + std::to_string(h) + " query heads");
  if ((n_h_sa && (kv_sa() == 0 || n_h_sa % kv_sa() != 0)) || (n_h_ra && (kv_ra() == 0 || n_h_ra % kv_ra() != 0)) ||
      kv_sa() + kv_ra() != kv)
    throw ConfigError("n_kv_heads " + std::to_string(kv) + " cannot be split proportionally over " +
                      std::to_string(n_h_sa) + " sensory and " + std::to_string(n_h_ra) + " relational heads");
  if (pos_encoding == PosEncoding::RoPE && d_key() % 2 != 0)
    throw ConfigError("RoPE needs an even d_key, got " + std::to_string(d_key()));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("attention dropout must lie in [0, 1)");
  if (!(rope_base > 0.0)) throw ConfigError("rope_base must be positive");
}

void SymbolConfig::validate(std::size_t d_model) const {
  switch (kind) {
    case SymbolKind::Positional:
      if (max_len == 0) throw ConfigError("positional symbols need max_len >= 1");
      break;
    case SymbolKind::PositionRelative:
      if (max_rel == 0) throw ConfigError("position-relative symbols need max_rel >= 1");
      break;
    case SymbolKind::SymbolicAttention:
      if (n_symbols == 0) throw ConfigError("symbolic attention needs n_symbols >= 1");
      if (n_sym_heads == 0 || d_model % n_sym_heads != 0)
        throw ConfigError("n_sym_heads must divide d_model");
      break;
  }
}

void ModelConfig::validate() const {
  attn.validate();
  if (attn.n_h_ra) symbols.validate(attn.d_model);
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  const bool tokens = arch != Arch::VisionEncoder;
  if (tokens && vocab == 0) throw ConfigError(std::string(to_string(arch)) + " needs vocab >= 1");
  if (tokens && max_len == 0) throw ConfigError("max_len must be positive");
  if (pad_id >= 0 && static_cast<std::size_t>(pad_id) >= vocab && tokens)
    throw ConfigError("pad_id outside the vocabulary");
  if (arch == Arch::VisionEncoder) {
    if (image_h == 0 || image_w == 0 || channels == 0 || patch == 0)
      throw ConfigError("vision_encoder needs image_h, image_w, channels and patch");
    if (image_h % patch || image_w % patch)
      throw ConfigError("patch " + std::to_string(patch) + " must divide the " + std::to_string(image_h) + "x" +
                        std::to_string(image_w) + " image");
  } else if (patch || image_h || image_w || channels) {
    throw ConfigError("patch geometry is only valid for vision_encoder");
  }
  if ((arch == Arch::EncoderOnly || arch == Arch::VisionEncoder) && n_classes < 1)
    throw ConfigError("classifier needs n_classes >= 1");
  if (tie_embeddings && arch != Arch::DecoderOnly && arch != Arch::EncoderDecoder)
    throw ConfigError("tie_embeddings needs a language-model head");
  if (attn.pos_encoding == PosEncoding::Learned && arch == Arch::VisionEncoder)
    throw ConfigError("vision_encoder uses learned_pos_emb instead of pos_encoding=learned");
  if (arch == Arch::VisionEncoder && pooling != Pooling::Mean)
    throw ConfigError("vision_encoder pools by mean");
}

namespace json_detail {

void require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
}

void reject_unknown(const Json& j, const std::string& path, std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(path + ": unknown key \"" + it.key() + "\"");
  }
}

}  // namespace json_detail

Json to_json(const DualAttnConfig& c) {
  return Json{{"d_model", c.d_model},
              {"n_h_sa", c.n_h_sa},
              {"n_h_ra", c.n_h_ra},
              {"d_r", c.d_r},
              {"symmetric_relations", c.symmetric_relations},
              {"n_kv_heads", c.n_kv_heads},
              {"pos_encoding", to_string(c.pos_encoding)},
              {"rope_base", c.rope_base},
              {"rel_variant", to_string(c.rel_variant)},
              {"dropout", c.dropout}};
}

Json to_json(const SymbolConfig& c) {
  return Json{{"kind", to_string(c.kind)},
              {"max_len", c.max_len},
              {"max_rel", c.max_rel},
              {"n_symbols", c.n_symbols},
              {"n_sym_heads", c.n_sym_heads}};
}

Json to_json(const ModelConfig& c) {
  return Json{{"arch", to_string(c.arch)},
              {"n_layers", c.n_layers},
              {"attn", to_json(c.attn)},
              {"symbols", to_json(c.symbols)},
              {"d_ff", c.d_ff},
              {"activation", to_string(c.activation)},
              {"norm", to_string(c.norm)},
              {"norm_placement", to_string(c.norm_placement)},
              {"bias", c.bias},
              {"vocab", c.vocab},
              {"max_len", c.max_len},
              {"pad_id", c.pad_id},
              {"tie_embeddings", c.tie_embeddings},
              {"n_classes", c.n_classes},
              {"pooling", to_string(c.pooling)},
              {"image_h", c.image_h},
              {"image_w", c.image_w},
              {"channels", c.channels},
              {"patch", c.patch},
              {"learned_pos_emb", c.learned_pos_emb},
              {"seed", c.seed}};
}

DualAttnConfig dual_attn_config_from_json(const Json& j, const std::string& path) {
  using namespace json_detail;
  require_object(j, path);
  reject_unknown(j, path,
                 {"d_model", "n_h_sa", "n_h_ra", "d_r", "symmetric_relations", "n_kv_heads", "pos_encoding",
                  "rope_base", "rel_variant", "dropout"});
  DualAttnConfig c;
  field(j, path, "d_model", c.d_model);
  field(j, path, "n_h_sa", c.n_h_sa);
  field(j, path, "n_h_ra", c.n_h_ra);
  field(j, path, "d_r", c.d_r);
  field(j, path, "symmetric_relations", c.symmetric_relations);
  field(j, path, "n_kv_heads", c.n_kv_heads);
  enum_field(j, path, "pos_encoding", kPosEncodings, c.pos_encoding);
  field(j, path, "rope_base", c.rope_base);
  enum_field(j, path, "rel_variant", kRelVariants, c.rel_variant);
  field(j, path, "dropout", c.dropout);
  return c;
}

SymbolConfig symbol_config_from_json(const Json& j, const std::string& path) {
  using namespace json_detail;
  require_object(j, path);
  reject_unknown(j, path, {"kind", "max_len", "max_rel", "n_symbols", "n_sym_heads"});
  SymbolConfig c;
  enum_field(j, path, "kind", kSymbolKinds, c.kind);
  field(j, path, "max_len", c.max_len);
  field(j, path, "max_rel", c.max_rel);
  field(j, path, "n_symbols", c.n_symbols);
  field(j, path, "n_sym_heads", c.n_sym_heads);
  return c;
}

ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  using namespace json_detail;
  require_object(j, path);
  reject_unknown(j, path,
                 {"arch", "n_layers", "attn", "symbols", "d_ff", "activation", "norm", "norm_placement", "bias",
                  "vocab", "max_len", "pad_id", "tie_embeddings", "n_classes", "pooling", "image_h", "image_w",
                  "channels", "patch", "learned_pos_emb", "seed"});
  ModelConfig c;
  enum_field(j, path, "arch", kArchs, c.arch);
  field(j, path, "n_layers", c.n_layers);
  if (auto it = j.find("attn"); it != j.end()) c.attn = dual_attn_config_from_json(*it, path + ".attn");
  if (auto it = j.find("symbols"); it != j.end()) c.symbols = symbol_config_from_json(*it, path + ".symbols");
  field(j, path, "d_ff", c.d_ff);
  enum_field(j, path, "activation", kActivations, c.activation);
  enum_field(j, path, "norm", kNorms, c.norm);
  enum_field(j, path, "norm_placement", kPlacements, c.norm_placement);
  field(j, path, "bias", c.bias);
  field(j, path, "vocab", c.vocab);
  field(j, path, "max_len", c.max_len);
  field(j, path, "pad_id", c.pad_id);
  field(j, path, "tie_embeddings", c.tie_embeddings);
  field(j, path, "n_classes", c.n_classes);
  enum_field(j, path, "pooling", kPoolings, c.pooling);
  field(j, path, "image_h", c.image_h);
  field(j, path, "image_w", c.image_w);
  field(j, path, "channels", c.channels);
  field(j, path, "patch", c.patch);
  field(j, path, "learned_pos_emb", c.learned_pos_emb);
  field(j, path, "seed", c.seed);
  return c;
}

}  // namespace dat
