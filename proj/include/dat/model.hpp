// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dat/attention.hpp"
#include "dat/config.hpp"
#include "dat/param.hpp"
#include "dat/symbols.hpp"

namespace dat {

template <typename T>
struct Linear {
  Tensor<T> W, b;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool bias, double stddev, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct Norm {
  NormKind kind = NormKind::LayerNorm;
  Tensor<T> gamma, beta;

  Norm() = default;
  Norm(NormKind kind, std::size_t d);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct Mlp {
  Activation act = Activation::GeLU;
  Linear<T> fc1, gate, fc2;  // gate only for SwiGLU

  Mlp() = default;
  Mlp(std::size_t d_model, std::size_t d_ff, Activation act, bool bias, double out_std, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

// Per-call context shared by the blocks of one forward pass.
template <typename T>
struct BlockContext {
  const SymbolLibrary<T>* symbols = nullptr;  // needed when the layer has relational heads
  bool train = false;
  Rng* rng = nullptr;
  double dropout = 0.0;
  Tensor<T>* relations_out = nullptr;  // receives the layer's relation tensor when set
};

template <typename T>
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(const ModelConfig& cfg, double out_std, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, const AttentionMask& mask, const BlockContext<T>& ctx) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  DualAttention<T> attn;
  Norm<T> norm1, norm2;
  Mlp<T> mlp;

 private:
  NormPlacement placement_ = NormPlacement::Pre;
};

// Causal dual attention, optional cross-attention to an encoder output, MLP.
template <typename T>
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(const ModelConfig& cfg, bool cross, double out_std, Rng& rng);

  // enc must be defined iff the block cross-attends.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& enc, const BlockContext<T>& ctx) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  DualAttention<T> attn;
  std::optional<CrossAttention<T>> cross;
  Norm<T> norm1, norm2, norm3;
  Mlp<T> mlp;

 private:
  NormPlacement placement_ = NormPlacement::Pre;
};

// [H, W, C] or [B, H, W, C] -> [(H/p)(W/p), p*p*C] (with leading B), row-major patch order.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p);
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p);

// Batch of inputs for forward(). Token archs fill tokens ([batch, len]);
// EncoderDecoder also fills tgt_tokens ([batch, tgt_len]); VisionEncoder
// fills images ([batch, H, W, C], values in [0, 1]).
struct ModelInput {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<std::int32_t> tokens;
  std::size_t tgt_len = 0;
  std::vector<std::int32_t> tgt_tokens;
  std::vector<float> images;
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // Logits: [batch, n_classes] for classifiers, [batch, len, vocab] for LMs
  // (tgt_len for EncoderDecoder).
  Tensor<T> forward(const ModelInput& in, bool train = false, Rng* rng = nullptr) const;

  // Relation tensor [batch, n, n, d_r] of one layer's relational heads, for
  // the given input (eval mode). Decoder layers of EncoderDecoder are
  // numbered after the encoder layers.
  Tensor<T> layer_relations(const ModelInput& in, std::size_t layer) const;

  // Every parameter in a fixed order with checkpoint names.
  ParamList<T> parameters() const;
  // Parameter counts grouped by submodule (name up to the last '.').
  std::map<std::string, std::size_t> parameter_counts() const;
  std::size_t parameter_count() const;

  std::size_t n_layers_total() const { return enc_.size() + dec_.size(); }

 private:
  Tensor<T> embed_tokens(const std::vector<std::int32_t>& ids, std::size_t b, std::size_t n, bool train,
                         Rng* rng) const;
  Tensor<T> run_encoder(const Tensor<T>& x, bool train, Rng* rng, std::size_t capture, Tensor<T>* rel) const;
  Tensor<T> run_decoder(const Tensor<T>& x, const Tensor<T>& enc, bool train, Rng* rng, std::size_t capture,
                        Tensor<T>* rel) const;
  Tensor<T> classify(const Tensor<T>& h) const;

  ModelConfig cfg_;
  std::optional<SymbolLibrary<T>> symbols_;
  Tensor<T> tok_emb_, pos_emb_, cls_;
  Linear<T> patch_embed_;
  std::vector<EncoderBlock<T>> enc_;
  std::vector<DecoderBlock<T>> dec_;
  std::optional<Norm<T>> final_enc_norm_, final_dec_norm_;
  Linear<T> head1_, head2_, lm_head_;
};

// Sinusoidal position table [n, d].
template <typename T>
Tensor<T> sinusoidal_table(std::size_t n, std::size_t d);

}  // namespace dat
