// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/attention.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "dat/ops.hpp"

namespace dat {

AttentionMask AttentionMask::explicit_matrix(std::size_t n, std::vector<std::uint8_t> keep) {
  if (keep.size() != n * n)
    throw DimensionError("explicit mask must be square: " + std::to_string(keep.size()) + " entries for n=" +
                         std::to_string(n));
  AttentionMask m(Kind::Explicit);
  m.n_ = n;
  m.keep_ = std::move(keep);
  return m;
}

bool AttentionMask::allows(std::size_t i, std::size_t j) const {
  switch (kind_) {
    case Kind::None:
      return true;
    case Kind::Causal:
      return j <= i;
    case Kind::Explicit:
      return keep_[i * n_ + j] != 0;
  }
  return true;
}

std::vector<std::uint8_t> AttentionMask::matrix(std::size_t n) const {
  if (kind_ == Kind::None) return {};
  if (kind_ == Kind::Explicit && n != n_)
    throw DimensionError("explicit mask is " + std::to_string(n_) + "x" + std::to_string(n_) +
                         " but the sequence has length " + std::to_string(n));
  std::vector<std::uint8_t> keep(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) keep[i * n + j] = allows(i, j) ? 1 : 0;
  return keep;
}

namespace {

template <typename T>
Tensor<T> as_batched(const Tensor<T>& x, std::size_t d) {
  if (x.rank() == 2) return reshape(x, {1, x.dim(0), x.dim(1)});
  if (x.rank() != 3 || x.dim(-1) != d)
    throw DimensionError("attention input must be [n, " + std::to_string(d) + "] or [B, n, " + std::to_string(d) +
                         "], got " + shape_str(x.shape()));
  return x;
}

template <typename T>
Tensor<T> restore_rank(const Tensor<T>& y, const Tensor<T>& like) {
  if (like.rank() == 3) return y;
  Shape s(y.shape().begin() + 1, y.shape().end());
  return reshape(y, std::move(s));
}

// [B, n, h*dk] -> [B, h, n, dk]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& t, std::size_t h) {
  const std::size_t b = t.dim(0), n = t.dim(1), dk = t.dim(2) / h;
  return permute(reshape(t, {b, n, h, dk}), {0, 2, 1, 3});
}

// [B, h, n, dh] -> [B, n, h*dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& t) {
  const std::size_t b = t.dim(0), h = t.dim(1), n = t.dim(2), dh = t.dim(3);
  return reshape(permute(t, {0, 2, 1, 3}), {b, n, h * dh});
}

// softmax(q k^T / sqrt(dk) + mask) for q [B, H, n, dk] and k [B, G, m, dk];
// query head h reads key group h / (H / G).
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const std::vector<std::uint8_t>& keep,
                            double p, bool train, Rng* rng) {
  const std::size_t b = q.dim(0), h = q.dim(1), n = q.dim(2), dk = q.dim(3);
  const std::size_t g = k.dim(1), m = k.dim(2);
  Tensor<T> scores;
  if (g == h) {
    scores = matmul(q, transpose_last2(k));
  } else {
    auto qg = reshape(q, {b, g, h / g, n, dk});
    auto kg = reshape(transpose_last2(k), {b, g, 1, dk, m});
    scores = reshape(matmul(qg, kg), {b, h, n, m});
  }
  scores = scale(scores, T(1) / std::sqrt(static_cast<T>(dk)));
  if (!keep.empty())
    scores = masked_fill_last2(scores, std::span<const std::uint8_t>(keep), n, m,
                               -std::numeric_limits<T>::infinity());
  auto alpha = softmax(scores, -1);
  if (train && p > 0.0) {
    if (!rng) throw ConfigError("dropout during training needs a random stream");
    alpha = dropout(alpha, p, true, *rng);
  }
  return alpha;
}

// alpha [B, H, n, m] applied to v [B, G, m, dv] -> [B, H, n, dv].
template <typename T>
Tensor<T> apply_weights(const Tensor<T>& alpha, const Tensor<T>& v) {
  const std::size_t b = alpha.dim(0), h = alpha.dim(1), n = alpha.dim(2), m = alpha.dim(3);
  const std::size_t g = v.dim(1), dv = v.dim(3);
  if (g == h) return matmul(alpha, v);
  auto ag = reshape(alpha, {b, g, h / g, n, m});
  auto vg = reshape(v, {b, g, 1, m, dv});
  return reshape(matmul(ag, vg), {b, h, n, dv});
}

template <typename T>
Tensor<T> project_out(const Tensor<T>& a, const Tensor<T>& w, const Tensor<T>& bias) {
  auto y = matmul(a, w);
  return bias.defined() ? add(y, bias) : y;
}

std::vector<int> iota_positions(std::size_t n) {
  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  return pos;
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> apply_rope(const Tensor<T>& q, const Tensor<T>& k, double base) {
  if (q.dim(-1) % 2 != 0) throw ConfigError("RoPE needs an even key dimension, got " + std::to_string(q.dim(-1)));
  auto pq = iota_positions(q.dim(-2));
  auto pk = iota_positions(k.dim(-2));
  return {rope(q, std::span<const int>(pq), base), rope(k, std::span<const int>(pk), base)};
}

template <typename T>
DualAttention<T>::DualAttention(const DualAttnConfig& cfg, bool bias, double out_std, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  constexpr double kStd = 0.02;
  const std::size_t d = cfg.d_model, dh = cfg.d_head(), dk = cfg.d_key();
  if (cfg.n_h_sa) {
    const std::size_t w = cfg.n_h_sa * dh;
    sa.W_q = normal_param<T>({d, cfg.n_h_sa * dk}, kStd, rng);
    sa.W_k = normal_param<T>({d, cfg.kv_sa() * dk}, kStd, rng);
    sa.W_v = normal_param<T>({d, cfg.kv_sa() * dh}, kStd, rng);
    sa.W_o = normal_param<T>({w, w}, out_std, rng);
    if (bias) sa.b_o = constant_param<T>({w}, T(0));
  }
  if (cfg.n_h_ra) {
    const std::size_t w = cfg.n_h_ra * dh;
    ra.W_q_attn = normal_param<T>({d, cfg.n_h_ra * dk}, kStd, rng);
    ra.W_k_attn = normal_param<T>({d, cfg.kv_ra() * dk}, kStd, rng);
    if (cfg.rel_variant == RelVariant::Relational) {
      const std::size_t rp = cfg.d_r * cfg.d_proj();
      ra.W_q_rel = normal_param<T>({d, rp}, kStd, rng);
      if (!cfg.symmetric_relations) ra.W_k_rel = normal_param<T>({d, rp}, kStd, rng);
      ra.W_r = normal_param<T>({cfg.n_h_ra, cfg.d_r, dh}, kStd, rng);
    }
    ra.W_s = normal_param<T>({d, w}, kStd, rng);
    ra.W_o = normal_param<T>({w, w}, out_std, rng);
    if (bias) ra.b_o = constant_param<T>({w}, T(0));
  }
}

template <typename T>
Tensor<T> DualAttention<T>::sensory(const Tensor<T>& x, const AttentionMask& mask, bool train, Rng* rng) const {
  if (!cfg_.n_h_sa) throw ConfigError("layer has no sensory heads");
  auto x3 = as_batched(x, cfg_.d_model);
  const auto keep = mask.matrix(x3.dim(1));
  auto q = split_heads(matmul(x3, sa.W_q), cfg_.n_h_sa);
  auto k = split_heads(matmul(x3, sa.W_k), cfg_.kv_sa());
  auto v = split_heads(matmul(x3, sa.W_v), cfg_.kv_sa());
  if (cfg_.pos_encoding == PosEncoding::RoPE) std::tie(q, k) = apply_rope(q, k, cfg_.rope_base);
  auto alpha = attention_weights(q, k, keep, cfg_.dropout, train, rng);
  auto y = project_out(merge_heads(apply_weights(alpha, v)), sa.W_o, sa.b_o);
  return restore_rank(y, x);
}

template <typename T>
Tensor<T> DualAttention<T>::relations(const Tensor<T>& x) const {
  if (!ra.W_q_rel.defined()) throw ConfigError("layer has no relation maps");
  auto x3 = as_batched(x, cfg_.d_model);
  const std::size_t b = x3.dim(0), n = x3.dim(1), r = cfg_.d_r, p = cfg_.d_proj();
  auto qr = reshape(matmul(x3, ra.W_q_rel), {b, n, r, p});
  // Symmetric relations reuse the query map, so r_ij == r_ji bit for bit.
  auto kr = cfg_.symmetric_relations ? qr : reshape(matmul(x3, ra.W_k_rel), {b, n, r, p});
  return restore_rank(pairwise_bilinear(qr, kr), x);
}

template <typename T>
Tensor<T> DualAttention<T>::relational_impl(const Tensor<T>& x3, const Symbols<T>& symbols,
                                            const AttentionMask& mask, bool train, Rng* rng, bool with_relations,
                                            Tensor<T>* relations_out) const {
  if (!cfg_.n_h_ra) throw ConfigError("layer has no relational heads");
  const std::size_t b = x3.dim(0), n = x3.dim(1), h = cfg_.n_h_ra, dh = cfg_.d_head(), d = cfg_.d_model;
  const auto keep = mask.matrix(n);

  auto q = split_heads(matmul(x3, ra.W_q_attn), h);
  auto k = split_heads(matmul(x3, ra.W_k_attn), cfg_.kv_ra());
  if (cfg_.pos_encoding == PosEncoding::RoPE) std::tie(q, k) = apply_rope(q, k, cfg_.rope_base);
  auto alpha = attention_weights(q, k, keep, cfg_.dropout, train, rng);  // [B, H, n, n]
  auto alpha_i = permute(alpha, {0, 2, 1, 3});                          // [B, n, H, n]

  // Symbol term: sum_j alpha_ij s_j W_s^h (or s_{j-i} for per-pair symbols).
  const auto& s = symbols.values;
  if (!s.defined()) throw DimensionError("relational heads need symbols");
  Tensor<T> sym;
  if (symbols.per_pair()) {
    if (s.rank() != 3 || s.dim(0) != n || s.dim(1) != n || s.dim(2) != d)
      throw DimensionError("per-pair symbols must be [" + std::to_string(n) + "," + std::to_string(n) + "," +
                           std::to_string(d) + "], got " + shape_str(s.shape()));
    auto sv = permute(reshape(matmul(s, ra.W_s), {n, n, h, dh}), {0, 2, 1, 3});  // [i, H, j, dh]
    sym = reshape(matmul(reshape(alpha_i, {b, n, h, 1, n}), sv), {b, n, h * dh});
  } else {
    auto s3 = s.rank() == 2 ? reshape(s, {1, s.dim(0), s.dim(1)}) : s;
    if (s3.rank() != 3 || s3.dim(1) != n || s3.dim(2) != d || (s3.dim(0) != 1 && s3.dim(0) != b))
      throw DimensionError("per-position symbols must be [1|B, " + std::to_string(n) + ", " + std::to_string(d) +
                           "], got " + shape_str(s.shape()));
    auto sv = split_heads(matmul(s3, ra.W_s), h);  // [1|B, H, n, dh]
    sym = merge_heads(matmul(alpha, sv));
  }

  Tensor<T> a = sym;
  if (with_relations) {
    auto rel = relations(x3);  // [B, n, n, d_r]
    if (relations_out) *relations_out = rel;
    // Attend over relations first, then apply W_r^h once per (i, h).
    auto ar = matmul(alpha_i, rel);  // [B, n, H, d_r]
    auto by_head = reshape(permute(ar, {2, 0, 1, 3}), {h, b * n, cfg_.d_r});
    auto rel_term = matmul(by_head, ra.W_r);  // [H, B*n, dh]
    rel_term = reshape(permute(reshape(rel_term, {h, b, n, dh}), {1, 2, 0, 3}), {b, n, h * dh});
    a = add(rel_term, sym);
  }
  return project_out(a, ra.W_o, ra.b_o);
}

template <typename T>
typename DualAttention<T>::RelationalOut DualAttention<T>::relational(const Tensor<T>& x, const Symbols<T>& symbols,
                                                                      const AttentionMask& mask, bool train,
                                                                      Rng* rng) const {
  auto x3 = as_batched(x, cfg_.d_model);
  const bool with_rel = cfg_.rel_variant == RelVariant::Relational;
  RelationalOut out;
  out.y = restore_rank(relational_impl(x3, symbols, mask, train, rng, with_rel, &out.relations), x);
  if (out.relations.defined()) out.relations = restore_rank(out.relations, x);
  return out;
}

template <typename T>
Tensor<T> DualAttention<T>::rca(const Tensor<T>& x, const Symbols<T>& symbols, const AttentionMask& mask, bool train,
                                Rng* rng) const {
  auto x3 = as_batched(x, cfg_.d_model);
  return restore_rank(relational_impl(x3, symbols, mask, train, rng, false, nullptr), x);
}

template <typename T>
typename DualAttention<T>::Out DualAttention<T>::forward(const Tensor<T>& x, const Symbols<T>* symbols,
                                                         const AttentionMask& mask, bool train, Rng* rng) const {
  Out out;
  std::vector<Tensor<T>> parts;
  if (cfg_.n_h_sa) parts.push_back(sensory(x, mask, train, rng));
  if (cfg_.n_h_ra) {
    if (!symbols) throw DimensionError("relational heads need symbols");
    auto r = relational(x, *symbols, mask, train, rng);
    parts.push_back(r.y);
    out.relations = r.relations;
  }
  out.y = concat_last(parts);
  return out;
}

template <typename T>
void DualAttention<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  const std::string s = prefix + "sa.", r = prefix + "ra.";
  add_param(out, s, "W_q", sa.W_q);
  add_param(out, s, "W_k", sa.W_k);
  add_param(out, s, "W_v", sa.W_v);
  add_param(out, s, "W_o", sa.W_o);
  add_param(out, s, "b_o", sa.b_o);
  add_param(out, r, "W_q_attn", ra.W_q_attn);
  add_param(out, r, "W_k_attn", ra.W_k_attn);
  add_param(out, r, "W_q_rel", ra.W_q_rel);
  add_param(out, r, "W_k_rel", ra.W_k_rel);
  add_param(out, r, "W_s", ra.W_s);
  add_param(out, r, "W_r", ra.W_r);
  add_param(out, r, "W_o", ra.W_o);
  add_param(out, r, "b_o", ra.b_o);
}

template <typename T>
CrossAttention<T>::CrossAttention(std::size_t d_model, std::size_t n_heads, bool bias, double out_std, Rng& rng)
    : d_model_(d_model), n_heads_(n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0)
    throw ConfigError("cross-attention heads must divide d_model");
  constexpr double kStd = 0.02;
  W_q = normal_param<T>({d_model, d_model}, kStd, rng);
  W_k = normal_param<T>({d_model, d_model}, kStd, rng);
  W_v = normal_param<T>({d_model, d_model}, kStd, rng);
  W_o = normal_param<T>({d_model, d_model}, out_std, rng);
  if (bias) b_o = constant_param<T>({d_model}, T(0));
}

template <typename T>
Tensor<T> CrossAttention<T>::forward(const Tensor<T>& x, const Tensor<T>& y, bool train, Rng* rng,
                                     double dropout) const {
  auto x3 = as_batched(x, d_model_);
  auto y3 = as_batched(y, d_model_);
  if (y3.dim(0) != x3.dim(0)) throw DimensionError("cross-attention batch sizes differ");
  auto q = split_heads(matmul(x3, W_q), n_heads_);
  auto k = split_heads(matmul(y3, W_k), n_heads_);
  auto v = split_heads(matmul(y3, W_v), n_heads_);
  auto alpha = attention_weights(q, k, {}, dropout, train, rng);
  return restore_rank(project_out(merge_heads(apply_weights(alpha, v)), W_o, b_o), x);
}

template <typename T>
void CrossAttention<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  add_param(out, prefix, "W_q", W_q);
  add_param(out, prefix, "W_k", W_k);
  add_param(out, prefix, "W_v", W_v);
  add_param(out, prefix, "W_o", W_o);
  add_param(out, prefix, "b_o", b_o);
}

template std::pair<Tensor<float>, Tensor<float>> apply_rope(const Tensor<float>&, const Tensor<float>&, double);
template std::pair<Tensor<double>, Tensor<double>> apply_rope(const Tensor<double>&, const Tensor<double>&, double);
template class DualAttention<float>;
template class DualAttention<double>;
template class CrossAttention<float>;
template class CrossAttention<double>;

}  // namespace dat
