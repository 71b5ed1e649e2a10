// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/model.hpp"

#include <cmath>

#include "dat/ops.hpp"

namespace dat {

namespace {
constexpr double kInitStd = 0.02;
constexpr std::size_t kNoCapture = static_cast<std::size_t>(-1);
}  // namespace

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, bool bias, double stddev, Rng& rng)
    : W(normal_param<T>({in, out}, stddev, rng)) {
  if (bias) b = constant_param<T>({out}, T(0));
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  auto y = matmul(x, W);
  return b.defined() ? add(y, b) : y;
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  add_param(out, prefix, "W", W);
  add_param(out, prefix, "b", b);
}

template <typename T>
Norm<T>::Norm(NormKind k, std::size_t d) : kind(k), gamma(constant_param<T>({d}, T(1))) {
  if (k == NormKind::LayerNorm) beta = constant_param<T>({d}, T(0));
}

template <typename T>
Tensor<T> Norm<T>::operator()(const Tensor<T>& x) const {
  return kind == NormKind::LayerNorm ? layer_norm(x, gamma, beta) : rms_norm(x, gamma);
}

template <typename T>
void Norm<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  add_param(out, prefix, "gamma", gamma);
  add_param(out, prefix, "beta", beta);
}

template <typename T>
Mlp<T>::Mlp(std::size_t d_model, std::size_t d_ff, Activation a, bool bias, double out_std, Rng& rng) : act(a) {
  fc1 = Linear<T>(d_model, d_ff, bias, kInitStd, rng);
  if (a == Activation::SwiGLU) gate = Linear<T>(d_model, d_ff, bias, kInitStd, rng);
  fc2 = Linear<T>(d_ff, d_model, bias, out_std, rng);
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  auto h = fc1(x);
  switch (act) {
    case Activation::ReLU:
      h = relu(h);
      break;
    case Activation::GeLU:
      h = gelu(h);
      break;
    case Activation::SwiGLU:
      h = mul(silu(h), gate(x));
      break;
  }
  return fc2(h);
}

template <typename T>
void Mlp<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  fc1.collect(out, prefix + "fc1.");
  if (gate.W.defined()) gate.collect(out, prefix + "gate.");
  fc2.collect(out, prefix + "fc2.");
}

namespace {

template <typename T>
Tensor<T> drop(const Tensor<T>& x, const BlockContext<T>& ctx) {
  if (!ctx.train || ctx.dropout == 0.0) return x;
  if (!ctx.rng) throw ConfigError("dropout during training needs a random stream");
  return dropout(x, ctx.dropout, true, *ctx.rng);
}

// Symbols come from the attention input of each layer, through the one
// shared library.
template <typename T>
typename DualAttention<T>::Out self_attention(const DualAttention<T>& attn, const Tensor<T>& h,
                                              const AttentionMask& mask, const BlockContext<T>& ctx) {
  std::optional<Symbols<T>> sym;
  if (attn.config().n_h_ra) {
    if (!ctx.symbols) throw ConfigError("relational heads need a symbol library");
    sym = ctx.symbols->assign(h);
  }
  auto out = attn.forward(h, sym ? &*sym : nullptr, mask, ctx.train, ctx.rng);
  if (ctx.relations_out) *ctx.relations_out = out.relations;
  return out;
}

}  // namespace

template <typename T>
EncoderBlock<T>::EncoderBlock(const ModelConfig& cfg, double out_std, Rng& rng) : placement_(cfg.norm_placement) {
  attn = DualAttention<T>(cfg.attn, cfg.bias, out_std, rng);
  norm1 = Norm<T>(cfg.norm, cfg.attn.d_model);
  norm2 = Norm<T>(cfg.norm, cfg.attn.d_model);
  mlp = Mlp<T>(cfg.attn.d_model, cfg.d_ff, cfg.activation, cfg.bias, out_std, rng);
}

template <typename T>
Tensor<T> EncoderBlock<T>::forward(const Tensor<T>& x, const AttentionMask& mask, const BlockContext<T>& ctx) const {
  if (placement_ == NormPlacement::Pre) {
    auto h = add(x, drop(self_attention(attn, norm1(x), mask, ctx).y, ctx));
    return add(h, drop(mlp(norm2(h)), ctx));
  }
  auto h = norm1(add(x, drop(self_attention(attn, x, mask, ctx).y, ctx)));
  return norm2(add(h, drop(mlp(h), ctx)));
}

template <typename T>
void EncoderBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  attn.collect(out, prefix + "attn.");
  norm1.collect(out, prefix + "norm1.");
  mlp.collect(out, prefix + "mlp.");
  norm2.collect(out, prefix + "norm2.");
}

template <typename T>
DecoderBlock<T>::DecoderBlock(const ModelConfig& cfg, bool with_cross, double out_std, Rng& rng)
    : placement_(cfg.norm_placement) {
  const std::size_t d = cfg.attn.d_model;
  attn = DualAttention<T>(cfg.attn, cfg.bias, out_std, rng);
  norm1 = Norm<T>(cfg.norm, d);
  if (with_cross) {
    cross.emplace(d, cfg.attn.n_heads(), cfg.bias, out_std, rng);
    norm2 = Norm<T>(cfg.norm, d);
  }
  norm3 = Norm<T>(cfg.norm, d);
  mlp = Mlp<T>(d, cfg.d_ff, cfg.activation, cfg.bias, out_std, rng);
}

template <typename T>
Tensor<T> DecoderBlock<T>::forward(const Tensor<T>& x, const Tensor<T>& enc, const BlockContext<T>& ctx) const {
  if (cross.has_value() != enc.defined())
    throw ConfigError(cross ? "cross-attending decoder block needs an encoder output"
                            : "decoder block without cross-attention got an encoder output");
  const auto causal = AttentionMask::causal();
  const bool pre = placement_ == NormPlacement::Pre;
  Tensor<T> h = pre ? add(x, drop(self_attention(attn, norm1(x), causal, ctx).y, ctx))
                    : norm1(add(x, drop(self_attention(attn, x, causal, ctx).y, ctx)));
  if (cross) {
    h = pre ? add(h, drop(cross->forward(norm2(h), enc, ctx.train, ctx.rng, ctx.dropout), ctx))
            : norm2(add(h, drop(cross->forward(h, enc, ctx.train, ctx.rng, ctx.dropout), ctx)));
  }
  return pre ? add(h, drop(mlp(norm3(h)), ctx)) : norm3(add(h, drop(mlp(h), ctx)));
}

template <typename T>
void DecoderBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  attn.collect(out, prefix + "attn.");
  norm1.collect(out, prefix + "norm1.");
  if (cross) {
    cross->collect(out, prefix + "cross.");
    norm2.collect(out, prefix + "norm2.");
  }
  mlp.collect(out, prefix + "mlp.");
  norm3.collect(out, prefix + "norm3.");
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t p) {
  const bool batched = image.rank() == 4;
  if (image.rank() != 3 && !batched) throw DimensionError("patchify expects [H,W,C] or [B,H,W,C]");
  const std::size_t b = batched ? image.dim(0) : 1;
  const std::size_t h = image.dim(-3), w = image.dim(-2), c = image.dim(-1);
  if (p == 0 || h % p || w % p)
    throw DimensionError("patch " + std::to_string(p) + " does not divide image " + shape_str(image.shape()));
  const std::size_t gh = h / p, gw = w / p;
  auto t = permute(reshape(image, {b, gh, p, gw, p, c}), {0, 1, 3, 2, 4, 5});
  return batched ? reshape(t, {b, gh * gw, p * p * c}) : reshape(t, {gh * gw, p * p * c});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p) {
  const bool batched = patches.rank() == 3;
  const std::size_t b = batched ? patches.dim(0) : 1;
  const std::size_t gh = h / p, gw = w / p;
  if (p == 0 || h % p || w % p || patches.dim(-2) != gh * gw || patches.dim(-1) != p * p * c)
    throw DimensionError("patches " + shape_str(patches.shape()) + " do not tile a " + std::to_string(h) + "x" +
                         std::to_string(w) + "x" + std::to_string(c) + " image");
  auto t = permute(reshape(patches, {b, gh, gw, p, p, c}), {0, 1, 3, 2, 4, 5});
  return batched ? reshape(t, {b, h, w, c}) : reshape(t, {h, w, c});
}

template <typename T>
Tensor<T> sinusoidal_table(std::size_t n, std::size_t d) {
  std::vector<T> v(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k / 2 * 2) / static_cast<double>(d));
      const double a = static_cast<double>(i) * freq;
      v[i * d + k] = static_cast<T>(k % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  return Tensor<T>({n, d}, std::move(v));
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t d = cfg.attn.d_model;
  const double out_std = kInitStd / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));

  if (cfg.has_relational()) symbols_.emplace(cfg.symbols, d, rng);

  if (cfg.arch == Arch::VisionEncoder) {
    patch_embed_ = Linear<T>(cfg.patch * cfg.patch * cfg.channels, d, true, kInitStd, rng);
    if (cfg.learned_pos_emb) pos_emb_ = normal_param<T>({cfg.n_patches(), d}, kInitStd, rng);
  } else {
    tok_emb_ = normal_param<T>({cfg.vocab, d}, kInitStd, rng);
    if (cfg.attn.pos_encoding == PosEncoding::Learned) pos_emb_ = normal_param<T>({cfg.max_len, d}, kInitStd, rng);
    if (cfg.arch == Arch::EncoderOnly && cfg.pooling == Pooling::CLS)
      cls_ = normal_param<T>({1, 1, d}, kInitStd, rng);
  }

  const bool has_encoder = cfg.arch != Arch::DecoderOnly;
  const bool has_decoder = cfg.arch == Arch::DecoderOnly || cfg.arch == Arch::EncoderDecoder;
  if (has_encoder)
    for (std::size_t i = 0; i < cfg.n_layers; ++i) enc_.emplace_back(cfg, out_std, rng);
  if (has_decoder)
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
      dec_.emplace_back(cfg, cfg.arch == Arch::EncoderDecoder, out_std, rng);
  if (cfg.norm_placement == NormPlacement::Pre) {
    if (has_encoder) final_enc_norm_.emplace(cfg.norm, d);
    if (has_decoder) final_dec_norm_.emplace(cfg.norm, d);
  }

  if (cfg.arch == Arch::EncoderOnly || cfg.arch == Arch::VisionEncoder) {
    head1_ = Linear<T>(d, d, true, kInitStd, rng);
    head2_ = Linear<T>(d, cfg.n_classes, true, kInitStd, rng);
  } else if (!cfg.tie_embeddings) {
    lm_head_ = Linear<T>(d, cfg.vocab, cfg.bias, kInitStd, rng);
  }
}

template <typename T>
Tensor<T> Model<T>::embed_tokens(const std::vector<std::int32_t>& ids, std::size_t b, std::size_t n, bool train,
                                 Rng* rng) const {
  if (ids.size() != b * n)
    throw DimensionError("token buffer holds " + std::to_string(ids.size()) + " ids, expected " +
                         std::to_string(b) + "x" + std::to_string(n));
  const std::size_t d = cfg_.attn.d_model;
  auto x = gather_rows(tok_emb_, std::span<const std::int32_t>(ids), Shape{b, n});
  if (cls_.defined()) {
    // Prepend the CLS vector along the sequence axis.
    auto cls = add(Tensor<T>({b, 1, d}, T(0)), cls_);
    x = permute(concat_last(std::vector<Tensor<T>>{permute(cls, {0, 2, 1}), permute(x, {0, 2, 1})}), {0, 2, 1});
    ++n;
  }
  if (n > cfg_.max_len)
    throw CapacityError("sequence of length " + std::to_string(n) + " exceeds max_len " +
                        std::to_string(cfg_.max_len));
  if (pos_emb_.defined()) {
    std::vector<std::int32_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<std::int32_t>(i);
    x = add(x, gather_rows(pos_emb_, std::span<const std::int32_t>(pos), Shape{n}));
  } else if (cfg_.attn.pos_encoding == PosEncoding::Sinusoidal) {
    x = add(x, sinusoidal_table<T>(n, d));
  }
  BlockContext<T> ctx{nullptr, train, rng, cfg_.attn.dropout, nullptr};
  return drop(x, ctx);
}

template <typename T>
Tensor<T> Model<T>::run_encoder(const Tensor<T>& x, bool train, Rng* rng, std::size_t capture,
                                Tensor<T>* rel) const {
  const auto mask = AttentionMask::none();
  Tensor<T> h = x;
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    BlockContext<T> ctx{symbols_ ? &*symbols_ : nullptr, train, rng, cfg_.attn.dropout,
                        i == capture ? rel : nullptr};
    h = enc_[i].forward(h, mask, ctx);
  }
  return final_enc_norm_ ? (*final_enc_norm_)(h) : h;
}

template <typename T>
Tensor<T> Model<T>::run_decoder(const Tensor<T>& x, const Tensor<T>& enc, bool train, Rng* rng, std::size_t capture,
                                Tensor<T>* rel) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < dec_.size(); ++i) {
    BlockContext<T> ctx{symbols_ ? &*symbols_ : nullptr, train, rng, cfg_.attn.dropout,
                        i == capture ? rel : nullptr};
    h = dec_[i].forward(h, enc, ctx);
  }
  return final_dec_norm_ ? (*final_dec_norm_)(h) : h;
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& h) const {
  auto pooled = cfg_.pooling == Pooling::CLS ? reshape(slice_last(permute(h, {0, 2, 1}), 0, 1), {h.dim(0), h.dim(2)})
                                             : mean_axis(h, 1);
  auto z = head1_(pooled);
  z = cfg_.activation == Activation::ReLU ? relu(z) : gelu(z);
  return head2_(z);
}

template <typename T>
Tensor<T> Model<T>::forward(const ModelInput& in, bool train, Rng* rng) const {
  const std::size_t b = in.batch;
  if (b == 0) throw DimensionError("empty batch");
  switch (cfg_.arch) {
    case Arch::VisionEncoder: {
      const std::size_t per = cfg_.image_h * cfg_.image_w * cfg_.channels;
      if (in.images.size() != b * per)
        throw DimensionError("image buffer holds " + std::to_string(in.images.size()) + " values, expected " +
                             std::to_string(b * per));
      Tensor<T> img({b, cfg_.image_h, cfg_.image_w, cfg_.channels},
                    std::vector<T>(in.images.begin(), in.images.end()));
      auto x = patch_embed_(patchify(img, cfg_.patch));
      if (pos_emb_.defined()) x = add(x, pos_emb_);
      if (cfg_.attn.pos_encoding == PosEncoding::Sinusoidal)
        x = add(x, sinusoidal_table<T>(cfg_.n_patches(), cfg_.attn.d_model));
      BlockContext<T> ctx{nullptr, train, rng, cfg_.attn.dropout, nullptr};
      return classify(run_encoder(drop(x, ctx), train, rng, kNoCapture, nullptr));
    }
    case Arch::EncoderOnly:
      return classify(run_encoder(embed_tokens(in.tokens, b, in.len, train, rng), train, rng, kNoCapture, nullptr));
    case Arch::DecoderOnly: {
      auto h = run_decoder(embed_tokens(in.tokens, b, in.len, train, rng), Tensor<T>(), train, rng, kNoCapture,
                           nullptr);
      return cfg_.tie_embeddings ? matmul(h, transpose_last2(tok_emb_)) : lm_head_(h);
    }
    case Arch::EncoderDecoder: {
      auto enc = run_encoder(embed_tokens(in.tokens, b, in.len, train, rng), train, rng, kNoCapture, nullptr);
      auto h = run_decoder(embed_tokens(in.tgt_tokens, b, in.tgt_len, train, rng), enc, train, rng, kNoCapture,
                           nullptr);
      return cfg_.tie_embeddings ? matmul(h, transpose_last2(tok_emb_)) : lm_head_(h);
    }
  }
  throw ConfigError("unknown architecture");
}

template <typename T>
Tensor<T> Model<T>::layer_relations(const ModelInput& in, std::size_t layer) const {
  if (layer >= n_layers_total())
    throw DimensionError("layer " + std::to_string(layer) + " out of range (" + std::to_string(n_layers_total()) +
                         " layers)");
  if (!cfg_.has_relational() || cfg_.attn.rel_variant != RelVariant::Relational)
    throw ConfigError("layer " + std::to_string(layer) + " has no relational heads");
  NoGradGuard guard;
  Tensor<T> rel;
  const std::size_t b = in.batch;
  switch (cfg_.arch) {
    case Arch::VisionEncoder: {
      Tensor<T> img({b, cfg_.image_h, cfg_.image_w, cfg_.channels},
                    std::vector<T>(in.images.begin(), in.images.end()));
      auto x = patch_embed_(patchify(img, cfg_.patch));
      if (pos_emb_.defined()) x = add(x, pos_emb_);
      if (cfg_.attn.pos_encoding == PosEncoding::Sinusoidal)
        x = add(x, sinusoidal_table<T>(cfg_.n_patches(), cfg_.attn.d_model));
      run_encoder(x, false, nullptr, layer, &rel);
      break;
    }
    case Arch::EncoderOnly:
      run_encoder(embed_tokens(in.tokens, b, in.len, false, nullptr), false, nullptr, layer, &rel);
      break;
    case Arch::DecoderOnly:
      run_decoder(embed_tokens(in.tokens, b, in.len, false, nullptr), Tensor<T>(), false, nullptr, layer, &rel);
      break;
    case Arch::EncoderDecoder: {
      const bool in_encoder = layer < enc_.size();
      auto enc = run_encoder(embed_tokens(in.tokens, b, in.len, false, nullptr), false, nullptr,
                             in_encoder ? layer : kNoCapture, &rel);
      if (!in_encoder)
        run_decoder(embed_tokens(in.tgt_tokens, b, in.tgt_len, false, nullptr), enc, false, nullptr,
                    layer - enc_.size(), &rel);
      break;
    }
  }
  return rel;
}

template <typename T>
ParamList<T> Model<T>::parameters() const {
  ParamList<T> out;
  add_param(out, "embed.", "tokens", tok_emb_);
  add_param(out, "embed.", "positions", pos_emb_);
  add_param(out, "embed.", "cls", cls_);
  if (patch_embed_.W.defined()) patch_embed_.collect(out, "embed.patch.");
  if (symbols_) symbols_->collect(out);
  for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(out, "layer." + std::to_string(i) + ".");
  const std::string dec_prefix = cfg_.arch == Arch::EncoderDecoder ? "dec.layer." : "layer.";
  for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(out, dec_prefix + std::to_string(i) + ".");
  if (final_enc_norm_) final_enc_norm_->collect(out, cfg_.arch == Arch::EncoderDecoder ? "enc.final_norm." : "final_norm.");
  if (final_dec_norm_) final_dec_norm_->collect(out, "final_norm.");
  if (head1_.W.defined()) {
    head1_.collect(out, "head.fc1.");
    head2_.collect(out, "head.fc2.");
  }
  if (lm_head_.W.defined()) lm_head_.collect(out, "lm_head.");
  return out;
}

template <typename T>
std::map<std::string, std::size_t> Model<T>::parameter_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& p : parameters()) counts[p.name.substr(0, p.name.rfind('.'))] += p.tensor.numel();
  return counts;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template struct Linear<float>;
template struct Linear<double>;
template struct Norm<float>;
template struct Norm<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template class EncoderBlock<float>;
template class EncoderBlock<double>;
template class DecoderBlock<float>;
template class DecoderBlock<double>;
template class Model<float>;
template class Model<double>;
template Tensor<float> patchify(const Tensor<float>&, std::size_t);
template Tensor<double> patchify(const Tensor<double>&, std::size_t);
template Tensor<float> unpatchify(const Tensor<float>&, std::size_t, std::size_t, std::size_t, std::size_t);
template Tensor<double> unpatchify(const Tensor<double>&, std::size_t, std::size_t, std::size_t, std::size_t);
template Tensor<float> sinusoidal_table(std::size_t, std::size_t);
template Tensor<double> sinusoidal_table(std::size_t, std::size_t);

}  // namespace dat
