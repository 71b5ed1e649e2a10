// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/verification.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "dat/ops.hpp"

namespace dat::verify {

Mat to_mat(const Tensor<double>& t) {
  if (t.rank() != 2) throw DimensionError("expected a matrix, got " + shape_str(t.shape()));
  Mat m(t.dim(0), t.dim(1));
  std::copy(t.data().begin(), t.data().end(), m.v.begin());
  return m;
}

namespace {

// Plain accessors for parameter tensors viewed as matrices.
double w2(const Tensor<double>& w, std::size_t r, std::size_t c) { return w.at(r * w.dim(-1) + c); }

// x [n, d] times W [d, m].
Mat times(const Mat& x, const Tensor<double>& w) {
  const std::size_t m = w.dim(-1);
  Mat out(x.rows, m);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t c = 0; c < m; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) acc += x(i, k) * w2(w, k, c);
      out(i, c) = acc;
    }
  return out;
}

void add_bias(Mat& x, const Tensor<double>& b) {
  if (!b.defined()) return;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t c = 0; c < x.cols; ++c) x(i, c) += b.at(c);
}

// Rotates consecutive pairs of the columns [col0, col0 + dk) of row i.
void rotate_row(Mat& m, std::size_t i, std::size_t col0, std::size_t dk, double base) {
  for (std::size_t t = 0; t < dk / 2; ++t) {
    const double theta = static_cast<double>(i) * std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(dk));
    const double c = std::cos(theta), s = std::sin(theta);
    double& a = m(i, col0 + 2 * t);
    double& b = m(i, col0 + 2 * t + 1);
    const double a0 = a, b0 = b;
    a = a0 * c - b0 * s;
    b = a0 * s + b0 * c;
  }
}

// Softmax weights of one query row over the allowed keys.
std::vector<double> weights_row(const Mat& q, std::size_t qcol, const Mat& k, std::size_t kcol, std::size_t dk,
                                std::size_t i, const AttentionMask& mask) {
  const std::size_t n = k.rows;
  std::vector<double> s(n, -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (!mask.allows(i, j)) continue;
    double dot = 0.0;
    for (std::size_t t = 0; t < dk; ++t) dot += q(i, qcol + t) * k(j, kcol + t);
    s[j] = dot / std::sqrt(static_cast<double>(dk));
    mx = std::max(mx, s[j]);
  }
  if (mx == -std::numeric_limits<double>::infinity()) throw MaskError("reference: fully masked row " + std::to_string(i));
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = std::isinf(s[j]) ? 0.0 : std::exp(s[j] - mx);
    z += s[j];
  }
  for (auto& e : s) e /= z;
  return s;
}

Mat reference_sensory(const DualAttention<double>& layer, const Mat& x, const AttentionMask& mask) {
  const auto& cfg = layer.config();
  const std::size_t n = x.rows, h = cfg.n_h_sa, g = cfg.kv_sa(), dk = cfg.d_key(), dh = cfg.d_head();
  Mat q = times(x, layer.sa.W_q), k = times(x, layer.sa.W_k), v = times(x, layer.sa.W_v);
  if (cfg.pos_encoding == PosEncoding::RoPE)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t hh = 0; hh < h; ++hh) rotate_row(q, i, hh * dk, dk, cfg.rope_base);
      for (std::size_t gg = 0; gg < g; ++gg) rotate_row(k, i, gg * dk, dk, cfg.rope_base);
    }
  Mat heads(n, h * dh);
  for (std::size_t hh = 0; hh < h; ++hh) {
    const std::size_t grp = hh / (h / g);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = weights_row(q, hh * dk, k, grp * dk, dk, i, mask);
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t t = 0; t < dh; ++t) heads(i, hh * dh + t) += a[j] * v(j, grp * dh + t);
    }
  }
  Mat y = times(heads, layer.sa.W_o);
  add_bias(y, layer.sa.b_o);
  return y;
}

Mat reference_relational(const DualAttention<double>& layer, const Mat& x, const RefSymbols& sym,
                         const AttentionMask& mask, bool with_relations, std::vector<double>* rel_out,
                         bool factored) {
  const auto& cfg = layer.config();
  const std::size_t n = x.rows, d = cfg.d_model, h = cfg.n_h_ra, g = cfg.kv_ra(), dk = cfg.d_key(),
                    dh = cfg.d_head();
  if (sym.values.cols != d || sym.values.rows != (sym.per_pair ? n * n : n))
    throw DimensionError("reference: symbol table does not match the sequence");
  Mat q = times(x, layer.ra.W_q_attn), k = times(x, layer.ra.W_k_attn);
  if (cfg.pos_encoding == PosEncoding::RoPE)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t hh = 0; hh < h; ++hh) rotate_row(q, i, hh * dk, dk, cfg.rope_base);
      for (std::size_t gg = 0; gg < g; ++gg) rotate_row(k, i, gg * dk, dk, cfg.rope_base);
    }

  std::vector<double> rel;
  const std::size_t dr = cfg.d_r;
  if (with_relations) {
    const std::size_t p = cfg.d_proj();
    Mat qr = times(x, layer.ra.W_q_rel);
    Mat kr = cfg.symmetric_relations ? qr : times(x, layer.ra.W_k_rel);
    rel.assign(n * n * dr, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t l = 0; l < dr; ++l) {
          double acc = 0.0;
          for (std::size_t t = 0; t < p; ++t) acc += qr(i, l * p + t) * kr(j, l * p + t);
          rel[(i * n + j) * dr + l] = acc;
        }
    if (rel_out) *rel_out = rel;
  }

  // Symbol projections s W_s for every stored symbol row.
  Mat sw = times(sym.values, layer.ra.W_s);
  Mat heads(n, h * dh);
  for (std::size_t hh = 0; hh < h; ++hh) {
    const std::size_t grp = hh / (h / g);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = weights_row(q, hh * dk, k, grp * dk, dk, i, mask);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t srow = sym.per_pair ? i * n + j : j;
        for (std::size_t t = 0; t < dh; ++t) {
          // Literal order: r_ij W_r^h first, then the attention sum.
          double payload = sw(srow, hh * dh + t);
          if (with_relations && !factored)
            for (std::size_t l = 0; l < dr; ++l)
              payload += rel[(i * n + j) * dr + l] * layer.ra.W_r.at((hh * dr + l) * dh + t);
          heads(i, hh * dh + t) += a[j] * payload;
        }
      }
      if (with_relations && factored) {
        // Attend over the relation vectors first, then map by W_r^h.
        std::vector<double> ar(dr, 0.0);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t l = 0; l < dr; ++l) ar[l] += a[j] * rel[(i * n + j) * dr + l];
        for (std::size_t t = 0; t < dh; ++t)
          for (std::size_t l = 0; l < dr; ++l) heads(i, hh * dh + t) += ar[l] * layer.ra.W_r.at((hh * dr + l) * dh + t);
      }
    }
  }
  Mat y = times(heads, layer.ra.W_o);
  add_bias(y, layer.ra.b_o);
  return y;
}

Mat hconcat(const Mat& a, const Mat& b) {
  Mat out(a.rows, a.cols + b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t c = 0; c < a.cols; ++c) out(i, c) = a(i, c);
    for (std::size_t c = 0; c < b.cols; ++c) out(i, a.cols + c) = b(i, c);
  }
  return out;
}

}  // namespace

RefAttentionOut reference_attention(const DualAttention<double>& layer, const Mat& x, const RefSymbols* symbols,
                                    const AttentionMask& mask, Mode mode, Order order) {
  const bool factored = order == Order::Factored;
  const auto& cfg = layer.config();
  RefAttentionOut out;
  const bool rel_terms = cfg.rel_variant == RelVariant::Relational;
  auto need_symbols = [&] {
    if (!symbols) throw DimensionError("reference: relational heads need symbols");
    return *symbols;
  };
  switch (mode) {
    case Mode::Sensory:
      out.y = reference_sensory(layer, x, mask);
      break;
    case Mode::Relational:
      out.y = reference_relational(layer, x, need_symbols(), mask, rel_terms, &out.relations, factored);
      break;
    case Mode::Rca:
      out.y = reference_relational(layer, x, need_symbols(), mask, false, nullptr, false);
      break;
    case Mode::Dual: {
      if (cfg.n_h_sa && cfg.n_h_ra)
        out.y = hconcat(reference_sensory(layer, x, mask),
                        reference_relational(layer, x, need_symbols(), mask, rel_terms, &out.relations, factored));
      else if (cfg.n_h_sa)
        out.y = reference_sensory(layer, x, mask);
      else
        out.y = reference_relational(layer, x, need_symbols(), mask, rel_terms, &out.relations, factored);
      break;
    }
  }
  return out;
}

RefSymbols reference_symbols(const SymbolLibrary<double>& lib, const Mat& x) {
  const auto& cfg = lib.config();
  const std::size_t n = x.rows, d = lib.d_model();
  RefSymbols out;
  switch (cfg.kind) {
    case SymbolKind::Positional:
      if (n > cfg.max_len) throw CapacityError("reference: sequence longer than the positional library");
      out.values = Mat(n, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) out.values(i, c) = w2(lib.S_lib, i, c);
      break;
    case SymbolKind::PositionRelative: {
      out.per_pair = true;
      out.values = Mat(n * n, d);
      const long long delta = static_cast<long long>(cfg.max_rel);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          long long off = static_cast<long long>(j) - static_cast<long long>(i);
          if (off > delta) off = delta;
          if (off < -delta) off = -delta;
          const auto row = static_cast<std::size_t>(off + delta);
          for (std::size_t c = 0; c < d; ++c) out.values(i * n + j, c) = w2(lib.S_lib, row, c);
        }
      break;
    }
    case SymbolKind::SymbolicAttention: {
      const std::size_t h = cfg.n_sym_heads, dh = d / h, ns = cfg.n_symbols;
      Mat q = times(x, lib.W_q);
      out.values = Mat(n, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t hh = 0; hh < h; ++hh) {
          std::vector<double> logit(ns);
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t s = 0; s < ns; ++s) {
            double dot = 0.0;
            for (std::size_t t = 0; t < dh; ++t) dot += q(i, hh * dh + t) * w2(lib.F_lib, s, hh * dh + t);
            logit[s] = dot / std::sqrt(static_cast<double>(dh));
            mx = std::max(mx, logit[s]);
          }
          double z = 0.0;
          for (auto& l : logit) z += (l = std::exp(l - mx));
          for (std::size_t s = 0; s < ns; ++s)
            for (std::size_t t = 0; t < dh; ++t)
              out.values(i, hh * dh + t) += logit[s] / z * w2(lib.S_lib, s, hh * dh + t);
        }
      break;
    }
  }
  return out;
}

namespace {

using ParamMap = std::map<std::string, Tensor<double>>;

const Tensor<double>& param(const ParamMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw DimensionError("reference: missing parameter " + name);
  return it->second;
}

Tensor<double> opt_param(const ParamMap& m, const std::string& name) {
  auto it = m.find(name);
  return it == m.end() ? Tensor<double>() : it->second;
}

Mat ref_norm(const Mat& x, NormKind kind, const ParamMap& m, const std::string& prefix) {
  const auto& gamma = param(m, prefix + "gamma");
  Mat out(x.rows, x.cols);
  const double d = static_cast<double>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    if (kind == NormKind::LayerNorm) {
      const auto& beta = param(m, prefix + "beta");
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < x.cols; ++c) mean += x(i, c);
      mean /= d;
      for (std::size_t c = 0; c < x.cols; ++c) var += (x(i, c) - mean) * (x(i, c) - mean);
      var /= d;
      for (std::size_t c = 0; c < x.cols; ++c)
        out(i, c) = (x(i, c) - mean) / std::sqrt(var + 1e-5) * gamma.at(c) + beta.at(c);
    } else {
      double ms = 0.0;
      for (std::size_t c = 0; c < x.cols; ++c) ms += x(i, c) * x(i, c);
      ms /= d;
      for (std::size_t c = 0; c < x.cols; ++c) out(i, c) = x(i, c) / std::sqrt(ms + 1e-6) * gamma.at(c);
    }
  }
  return out;
}

Mat ref_linear(const Mat& x, const ParamMap& m, const std::string& prefix) {
  Mat y = times(x, param(m, prefix + "W"));
  add_bias(y, opt_param(m, prefix + "b"));
  return y;
}

double ref_act(double v, Activation a) {
  switch (a) {
    case Activation::ReLU:
      return v > 0.0 ? v : 0.0;
    case Activation::GeLU:
      return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    case Activation::SwiGLU:
      return v / (1.0 + std::exp(-v));
  }
  return v;
}

Mat ref_mlp(const Mat& x, Activation act, const ParamMap& m, const std::string& prefix) {
  Mat h = ref_linear(x, m, prefix + "fc1.");
  Mat gate;
  if (act == Activation::SwiGLU) gate = ref_linear(x, m, prefix + "gate.");
  for (std::size_t i = 0; i < h.v.size(); ++i) {
    h.v[i] = ref_act(h.v[i], act);
    if (act == Activation::SwiGLU) h.v[i] *= gate.v[i];
  }
  return ref_linear(h, m, prefix + "fc2.");
}

Mat plus(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
  return out;
}

DualAttention<double> layer_from(const ModelConfig& cfg, const ParamMap& m, const std::string& prefix) {
  Rng rng(0);
  DualAttention<double> layer(cfg.attn, cfg.bias, 0.02, rng);
  auto set = [&](Tensor<double>& dst, const char* name) {
    if (dst.defined()) dst = param(m, prefix + name);
  };
  set(layer.sa.W_q, "sa.W_q");
  set(layer.sa.W_k, "sa.W_k");
  set(layer.sa.W_v, "sa.W_v");
  set(layer.sa.W_o, "sa.W_o");
  set(layer.sa.b_o, "sa.b_o");
  set(layer.ra.W_q_attn, "ra.W_q_attn");
  set(layer.ra.W_k_attn, "ra.W_k_attn");
  set(layer.ra.W_q_rel, "ra.W_q_rel");
  set(layer.ra.W_k_rel, "ra.W_k_rel");
  set(layer.ra.W_s, "ra.W_s");
  set(layer.ra.W_r, "ra.W_r");
  set(layer.ra.W_o, "ra.W_o");
  set(layer.ra.b_o, "ra.b_o");
  return layer;
}

std::optional<SymbolLibrary<double>> library_from(const ModelConfig& cfg, const ParamMap& m) {
  if (!cfg.has_relational()) return std::nullopt;
  Rng rng(0);
  SymbolLibrary<double> lib(cfg.symbols, cfg.attn.d_model, rng);
  lib.S_lib = param(m, "symbols.S_lib");
  if (lib.F_lib.defined()) lib.F_lib = param(m, "symbols.F_lib");
  if (lib.W_q.defined()) lib.W_q = param(m, "symbols.W_q");
  return lib;
}

Mat ref_self_attention(const ModelConfig& cfg, const ParamMap& m, const std::string& prefix,
                       const std::optional<SymbolLibrary<double>>& lib, const Mat& h, const AttentionMask& mask) {
  auto layer = layer_from(cfg, m, prefix + "attn.");
  std::optional<RefSymbols> sym;
  if (lib) sym = reference_symbols(*lib, h);
  return reference_attention(layer, h, sym ? &*sym : nullptr, mask, Mode::Dual).y;
}

Mat ref_cross(const ModelConfig& cfg, const ParamMap& m, const std::string& prefix, const Mat& x, const Mat& y) {
  const std::size_t h = cfg.attn.n_heads(), dh = cfg.attn.d_model / h;
  Mat q = times(x, param(m, prefix + "W_q")), k = times(y, param(m, prefix + "W_k")),
      v = times(y, param(m, prefix + "W_v"));
  Mat heads(x.rows, cfg.attn.d_model);
  const auto none = AttentionMask::none();
  for (std::size_t hh = 0; hh < h; ++hh)
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto a = weights_row(q, hh * dh, k, hh * dh, dh, i, none);
      for (std::size_t j = 0; j < y.rows; ++j)
        for (std::size_t t = 0; t < dh; ++t) heads(i, hh * dh + t) += a[j] * v(j, hh * dh + t);
    }
  Mat out = times(heads, param(m, prefix + "W_o"));
  add_bias(out, opt_param(m, prefix + "b_o"));
  return out;
}

Mat ref_embed(const ModelConfig& cfg, const ParamMap& m, const std::vector<std::int32_t>& ids, bool cls) {
  const std::size_t d = cfg.attn.d_model;
  const std::size_t n = ids.size() + (cls ? 1 : 0);
  Mat x(n, d);
  const auto& tok = param(m, "embed.tokens");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      x(i, c) = cls && i == 0 ? param(m, "embed.cls").at(c) : w2(tok, static_cast<std::size_t>(ids[i - (cls ? 1 : 0)]), c);
  if (cfg.attn.pos_encoding == PosEncoding::Learned) {
    const auto& pos = param(m, "embed.positions");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) x(i, c) += w2(pos, i, c);
  } else if (cfg.attn.pos_encoding == PosEncoding::Sinusoidal) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        const double a = static_cast<double>(i) * std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d));
        x(i, c) += c % 2 == 0 ? std::sin(a) : std::cos(a);
      }
  }
  return x;
}

Mat ref_encoder(const ModelConfig& cfg, const ParamMap& m, const std::optional<SymbolLibrary<double>>& lib, Mat x,
                const std::string& final_norm) {
  const auto none = AttentionMask::none();
  const bool pre = cfg.norm_placement == NormPlacement::Pre;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    if (pre) {
      x = plus(x, ref_self_attention(cfg, m, p, lib, ref_norm(x, cfg.norm, m, p + "norm1."), none));
      x = plus(x, ref_mlp(ref_norm(x, cfg.norm, m, p + "norm2."), cfg.activation, m, p + "mlp."));
    } else {
      x = ref_norm(plus(x, ref_self_attention(cfg, m, p, lib, x, none)), cfg.norm, m, p + "norm1.");
      x = ref_norm(plus(x, ref_mlp(x, cfg.activation, m, p + "mlp.")), cfg.norm, m, p + "norm2.");
    }
  }
  return pre ? ref_norm(x, cfg.norm, m, final_norm) : x;
}

Mat ref_decoder(const ModelConfig& cfg, const ParamMap& m, const std::optional<SymbolLibrary<double>>& lib, Mat x,
                const Mat* enc, const std::string& layer_prefix) {
  const auto causal = AttentionMask::causal();
  const bool pre = cfg.norm_placement == NormPlacement::Pre;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = layer_prefix + std::to_string(l) + ".";
    if (pre) {
      x = plus(x, ref_self_attention(cfg, m, p, lib, ref_norm(x, cfg.norm, m, p + "norm1."), causal));
      if (enc) x = plus(x, ref_cross(cfg, m, p + "cross.", ref_norm(x, cfg.norm, m, p + "norm2."), *enc));
      x = plus(x, ref_mlp(ref_norm(x, cfg.norm, m, p + "norm3."), cfg.activation, m, p + "mlp."));
    } else {
      x = ref_norm(plus(x, ref_self_attention(cfg, m, p, lib, x, causal)), cfg.norm, m, p + "norm1.");
      if (enc) x = ref_norm(plus(x, ref_cross(cfg, m, p + "cross.", x, *enc)), cfg.norm, m, p + "norm2.");
      x = ref_norm(plus(x, ref_mlp(x, cfg.activation, m, p + "mlp.")), cfg.norm, m, p + "norm3.");
    }
  }
  return pre ? ref_norm(x, cfg.norm, m, "final_norm.") : x;
}

Mat ref_lm_head(const ModelConfig& cfg, const ParamMap& m, const Mat& h) {
  if (!cfg.tie_embeddings) return ref_linear(h, m, "lm_head.");
  const auto& tok = param(m, "embed.tokens");
  Mat out(h.rows, cfg.vocab);
  for (std::size_t i = 0; i < h.rows; ++i)
    for (std::size_t v = 0; v < cfg.vocab; ++v) {
      double acc = 0.0;
      for (std::size_t c = 0; c < h.cols; ++c) acc += h(i, c) * w2(tok, v, c);
      out(i, v) = acc;
    }
  return out;
}

}  // namespace

Mat reference_forward(const ModelConfig& cfg, const ParamList<double>& params, const std::vector<std::int32_t>& src,
                      const std::vector<std::int32_t>& tgt) {
  ParamMap m;
  for (const auto& p : params) m[p.name] = p.tensor;
  const auto lib = library_from(cfg, m);
  switch (cfg.arch) {
    case Arch::EncoderOnly: {
      const bool cls = cfg.pooling == Pooling::CLS;
      Mat h = ref_encoder(cfg, m, lib, ref_embed(cfg, m, src, cls), "final_norm.");
      Mat pooled(1, h.cols);
      for (std::size_t c = 0; c < h.cols; ++c) {
        if (cls) {
          pooled(0, c) = h(0, c);
        } else {
          for (std::size_t i = 0; i < h.rows; ++i) pooled(0, c) += h(i, c);
          pooled(0, c) /= static_cast<double>(h.rows);
        }
      }
      Mat z = ref_linear(pooled, m, "head.fc1.");
      for (auto& e : z.v) e = ref_act(e, cfg.activation == Activation::ReLU ? Activation::ReLU : Activation::GeLU);
      return ref_linear(z, m, "head.fc2.");
    }
    case Arch::DecoderOnly:
      return ref_lm_head(cfg, m, ref_decoder(cfg, m, lib, ref_embed(cfg, m, src, false), nullptr, "layer."));
    case Arch::EncoderDecoder: {
      Mat enc = ref_encoder(cfg, m, lib, ref_embed(cfg, m, src, false), "enc.final_norm.");
      return ref_lm_head(cfg, m, ref_decoder(cfg, m, lib, ref_embed(cfg, m, tgt, false), &enc, "dec.layer."));
    }
    case Arch::VisionEncoder:
      break;
  }
  throw UnsupportedError("reference_forward covers token architectures only");
}

// ---- select-then-relate --------------------------------------------------

namespace {

double bilinear_form(const Mat& M, const std::vector<double>& x, const std::vector<double>& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < M.rows; ++i)
    for (std::size_t j = 0; j < M.cols; ++j) acc += x[i] * M(i, j) * y[j];
  return acc;
}

}  // namespace

SelectRelateSpec SelectRelateSpec::from_bilinear(BilinearForms forms) {
  SelectRelateSpec s;
  s.dim = forms.dim;
  s.d_r = forms.B.size();
  if (forms.A.rows != s.dim || forms.A.cols != s.dim) throw DimensionError("utility form must be dim x dim");
  for (const auto& b : forms.B)
    if (b.rows != s.dim || b.cols != s.dim) throw DimensionError("relation forms must be dim x dim");
  s.utility = [A = forms.A](const std::vector<double>& x, const std::vector<double>& y) { return bilinear_form(A, x, y); };
  s.relation = [B = forms.B](const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> r(B.size());
    for (std::size_t l = 0; l < B.size(); ++l) r[l] = bilinear_form(B[l], x, y);
    return r;
  };
  s.bilinear = std::move(forms);
  return s;
}

std::size_t select_index(const SelectRelateSpec& spec, const std::vector<double>& x,
                         const std::vector<std::vector<double>>& ys, double tie_tol) {
  if (ys.empty()) throw DimensionError("selection over an empty context");
  std::size_t best = 0;
  double best_u = spec.utility(x, ys[0]);
  for (std::size_t j = 1; j < ys.size(); ++j) {
    const double u = spec.utility(x, ys[j]);
    if (u > best_u) {
      best = j;
      best_u = u;
    }
  }
  for (std::size_t j = 0; j < ys.size(); ++j)
    if (j != best && best_u - spec.utility(x, ys[j]) <= tie_tol)
      throw SelectionError("selection is not unique: candidates " + std::to_string(best) + " and " +
                           std::to_string(j) + " tie");
  return best;
}

std::vector<double> oracle_select_then_relate(const SelectRelateSpec& spec, const std::vector<double>& x,
                                              const std::vector<std::vector<double>>& ys, double tie_tol) {
  return spec.relation(x, ys[select_index(spec, x, ys, tie_tol)]);
}

double selection_margin(const SelectRelateSpec& spec, const std::vector<double>& x,
                        const std::vector<std::vector<double>>& ys) {
  if (ys.size() < 2) return std::numeric_limits<double>::infinity();
  std::vector<double> u(ys.size());
  for (std::size_t j = 0; j < ys.size(); ++j) u[j] = spec.utility(x, ys[j]);
  std::partial_sort(u.begin(), u.begin() + 2, u.end(), std::greater<>());
  return u[0] - u[1];
}

RaApproximant::RaApproximant(const SelectRelateSpec& spec, double beta)
    : dim_(spec.dim), d_r_(spec.d_r), d_model_(spec.dim * spec.d_r) {
  if (!spec.bilinear) throw UnsupportedError("RA approximant construction needs a bilinear utility and relation");
  if (dim_ == 0 || d_r_ == 0) throw DimensionError("empty select-then-relate spec");
  if (!(beta > 0.0)) throw ConfigError("sharpness beta must be positive");
  const auto& forms = *spec.bilinear;
  const std::size_t D = d_model_;

  // One relational head of width D, so d_proj = D / d_r = dim: each relation
  // coordinate gets a dim-wide bilinear subspace, enough for any B_l.
  DualAttnConfig cfg;
  cfg.d_model = D;
  cfg.n_h_sa = 0;
  cfg.n_h_ra = 1;
  cfg.d_r = d_r_;
  Rng rng(0);
  layer_ = DualAttention<double>(cfg, false, 0.02, rng);

  auto zeros = [](Shape s) { return Tensor<double>::parameter(s, std::vector<double>(shape_numel(s), 0.0)); };
  // Scores q.k / sqrt(D) = beta * x^T A y.
  std::vector<double> wq(D * D, 0.0), wk(D * D, 0.0);
  const double s = beta * std::sqrt(static_cast<double>(D));
  for (std::size_t c = 0; c < dim_; ++c)
    for (std::size_t t = 0; t < dim_; ++t) wq[c * D + t] = s * forms.A(c, t);
  for (std::size_t c = 0; c < D; ++c) wk[c * D + c] = 1.0;
  layer_.ra.W_q_attn = Tensor<double>::parameter({D, D}, wq);
  layer_.ra.W_k_attn = Tensor<double>::parameter({D, D}, wk);

  // B_l = U S V^T  =>  x^T B_l y = <x^T U sqrt(S), y^T V sqrt(S)>.
  std::vector<double> qrel(D * D, 0.0), krel(D * D, 0.0);
  for (std::size_t l = 0; l < d_r_; ++l) {
    Eigen::MatrixXd B(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = forms.B[l](i, j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    for (std::size_t c = 0; c < dim_; ++c)
      for (std::size_t t = 0; t < dim_; ++t) {
        const auto ci = static_cast<Eigen::Index>(c), ti = static_cast<Eigen::Index>(t);
        const double root = std::sqrt(sv(ti));
        qrel[c * D + l * dim_ + t] = svd.matrixU()(ci, ti) * root;
        krel[c * D + l * dim_ + t] = svd.matrixV()(ci, ti) * root;
      }
  }
  layer_.ra.W_q_rel = Tensor<double>::parameter({D, D}, qrel);
  layer_.ra.W_k_rel = Tensor<double>::parameter({D, D}, krel);

  // W_r routes relation coordinate l to output column l; symbols are off.
  std::vector<double> wr(d_r_ * D, 0.0);
  for (std::size_t l = 0; l < d_r_; ++l) wr[l * D + l] = 1.0;
  layer_.ra.W_r = Tensor<double>::parameter({1, d_r_, D}, wr);
  layer_.ra.W_s = zeros({D, D});
  layer_.ra.W_o = Tensor<double>::parameter({D, D}, wk);
}

std::vector<double> RaApproximant::evaluate(const std::vector<double>& x,
                                            const std::vector<std::vector<double>>& ys) const {
  if (x.size() != dim_) throw DimensionError("query has the wrong dimension");
  const std::size_t n = ys.size() + 1, D = d_model_;
  std::vector<double> seq(n * D, 0.0);
  std::copy(x.begin(), x.end(), seq.begin());
  for (std::size_t j = 0; j < ys.size(); ++j) {
    if (ys[j].size() != dim_) throw DimensionError("context element has the wrong dimension");
    std::copy(ys[j].begin(), ys[j].end(), seq.begin() + static_cast<long>((j + 1) * D));
  }
  std::vector<std::uint8_t> keep(n * n, 1);
  keep[0] = 0;  // the query attends to the context only
  const auto mask = AttentionMask::explicit_matrix(n, keep);
  Symbols<double> sym{SymbolKind::Positional, Tensor<double>({1, n, D}, 0.0)};
  NoGradGuard guard;
  auto out = layer_.relational(Tensor<double>({n, D}, seq), sym, mask);
  return {out.y.data().begin(), out.y.data().begin() + static_cast<long>(d_r_)};
}

RaApproximant construct_ra_approximant(const SelectRelateSpec& spec, double beta) { return RaApproximant(spec, beta); }

// ---- gradient checks -----------------------------------------------------

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

bool GradcheckReport::passed() const {
  return std::all_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.passed; });
}

std::vector<std::string> GradcheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (!p.passed) out.push_back(p.name);
  return out;
}

double gradcheck_fn(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs, double h,
                    double floor) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      double lp, lm;
      {
        NoGradGuard guard;
        v[i] = saved + h;
        lp = loss().item();
        v[i] = saved - h;
        lm = loss().item();
      }
      v[i] = saved;
      worst = std::max(worst, relative_error(analytic[i], (lp - lm) / (2 * h), floor));
    }
  }
  return worst;
}

GradcheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, const GradcheckOptions& opt) {
  ModelConfig c = cfg;
  c.seed = seed;
  c.attn.dropout = 0.0;
  Model<double> model(c);
  Rng rng(Rng::derive(seed, 17));
  auto params = model.parameters();
  for (auto& p : params) {
    const bool is_gain = p.name.ends_with("gamma");
    for (auto& v : p.tensor.mutable_data()) v = (is_gain ? 1.0 : 0.0) + rng.normal() * opt.param_std;
  }

  ModelInput in;
  in.batch = 2;
  std::vector<std::int32_t> targets;
  if (c.arch == Arch::VisionEncoder) {
    in.images.resize(in.batch * c.image_h * c.image_w * c.channels);
    for (auto& v : in.images) v = static_cast<float>(rng.uniform());
  } else {
    const std::size_t room = c.max_len - (c.arch == Arch::EncoderOnly && c.pooling == Pooling::CLS ? 1 : 0);
    in.len = std::min<std::size_t>(5, room);
    if (c.has_relational() && c.symbols.kind == SymbolKind::Positional)
      in.len = std::min(in.len, c.symbols.max_len - (c.pooling == Pooling::CLS ? 1 : 0));
    in.tokens.resize(in.batch * in.len);
    for (auto& t : in.tokens) t = static_cast<std::int32_t>(rng.below(c.vocab));
    if (c.arch == Arch::EncoderDecoder) {
      in.tgt_len = in.len;
      in.tgt_tokens.resize(in.batch * in.tgt_len);
      for (auto& t : in.tgt_tokens) t = static_cast<std::int32_t>(rng.below(c.vocab));
    }
  }
  const bool classifier = c.arch == Arch::EncoderOnly || c.arch == Arch::VisionEncoder;
  const std::size_t n_targets =
      classifier ? in.batch : in.batch * (c.arch == Arch::EncoderDecoder ? in.tgt_len : in.len);
  const std::size_t n_out = classifier ? c.n_classes : c.vocab;
  targets.resize(n_targets);
  for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(n_out));

  auto loss = [&] {
    return cross_entropy(model.forward(in), std::span<const std::int32_t>(targets));
  };
  loss().backward();

  GradcheckReport report;
  report.threshold = opt.threshold;
  for (auto& p : params) {
    ParamCheck pc;
    pc.name = p.name;
    std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    if (analytic.empty()) analytic.assign(p.tensor.numel(), 0.0);
    auto v = p.tensor.mutable_data();
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_entries_per_param && idx.size() > opt.max_entries_per_param) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_entries_per_param);
    }
    NoGradGuard guard;
    for (auto i : idx) {
      const double saved = v[i];
      auto at = [&](double delta) {
        v[i] = saved + delta;
        return loss().item();
      };
      double num;
      if (opt.fourth_order)
        num = (8.0 * (at(opt.h) - at(-opt.h)) - (at(2 * opt.h) - at(-2 * opt.h))) / (12.0 * opt.h);
      else
        num = (at(opt.h) - at(-opt.h)) / (2 * opt.h);
      v[i] = saved;
      pc.max_rel_err = std::max(pc.max_rel_err, relative_error(analytic[i], num));
      pc.max_abs_err = std::max(pc.max_abs_err, std::abs(analytic[i] - num));
      ++pc.checked;
    }
    pc.passed = pc.max_rel_err < opt.threshold;
    report.params.push_back(pc);
  }
  return report;
}

}  // namespace dat::verify
