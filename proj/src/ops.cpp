// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#include "dat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dat/kernels.hpp"

namespace dat {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
bool needs_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Allocates the output node; wires parents and backward only if recording.
template <typename T, typename F>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::initializer_list<const Tensor<T>*> inputs, F&& backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (needs_grad<T>(inputs)) {
    node->requires_grad = true;
    for (auto* t : inputs)
      if (t->defined()) node->parents.push_back(t->node());
    node->backward = std::forward<F>(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
std::vector<T>* grad_of(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return &t.node()->grad_buffer();
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

// Per-dimension strides of `in` aligned to `out`, zero where broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t od = out.size() - 1 - i;
    const std::size_t id = in.size() - 1 - i;
    strides[od] = in[id] == 1 ? 0 : stride;
    stride *= in[id];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                           shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

// Walks a broadcast output in row-major order, yielding (out, a, b) offsets.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = shape_numel(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<long>(small.size()));
}

enum class BinOp { Add, Sub, Mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto apply = [op](T x, T y) {
    switch (op) {
      case BinOp::Add: return x + y;
      case BinOp::Sub: return x - y;
      default: return x * y;
    }
  };
  // Fast path: b tiles a (same shape or trailing-suffix broadcast).
  if (is_suffix(bs, as)) {
    const std::size_t n = a.numel(), m = b.numel();
    std::vector<T> out(n);
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(av[i], bv[i % m]);
    return make_result<T>(as, std::move(out), name, {&a, &b}, [a, b, op, n, m](detail::Node<T>& self) {
      const auto& g = self.grad;
      if (auto* ga = grad_of(a)) {
        if (op == BinOp::Mul) {
          auto bv = b.data();
          for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * bv[i % m];
        } else {
          for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
        }
      }
      if (auto* gb = grad_of(b)) {
        const T sign = op == BinOp::Sub ? T(-1) : T(1);
        if (op == BinOp::Mul) {
          auto av = a.data();
          for (std::size_t i = 0; i < n; ++i) (*gb)[i % m] += g[i] * av[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) (*gb)[i % m] += sign * g[i];
        }
      }
    });
  }
  const Shape out_shape = broadcast_shape(as, bs, name);
  auto sa = broadcast_strides(as, out_shape);
  auto sb = broadcast_strides(bs, out_shape);
  std::vector<T> out(shape_numel(out_shape));
  {
    auto av = a.data();
    auto bv = b.data();
    for_each_broadcast(out_shape, sa, sb,
                       [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = apply(av[ia], bv[ib]); });
  }
  return make_result<T>(out_shape, std::move(out), name, {&a, &b},
                        [a, b, op, out_shape, sa, sb](detail::Node<T>& self) {
                          const auto& g = self.grad;
                          auto av = a.data();
                          auto bv = b.data();
                          auto* ga = grad_of(a);
                          auto* gb = grad_of(b);
                          for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                            switch (op) {
                              case BinOp::Add:
                                if (ga) (*ga)[ia] += g[o];
                                if (gb) (*gb)[ib] += g[o];
                                break;
                              case BinOp::Sub:
                                if (ga) (*ga)[ia] += g[o];
                                if (gb) (*gb)[ib] -= g[o];
                                break;
                              case BinOp::Mul:
                                if (ga) (*ga)[ia] += g[o] * bv[ib];
                                if (gb) (*gb)[ib] += g[o] * av[ia];
                                break;
                            }
                          });
                        });
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(out), name, {&x}, [x, deriv](detail::Node<T>& self) {
    auto* gx = grad_of(x);
    if (!gx) return;
    auto xv = x.data();
    auto yv = std::span<const T>(self.value);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  using kernels::Trans;
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k)
    throw DimensionError("matmul inner extents differ: " + shape_str(a.shape()) + " @ " +
                         shape_str(b.shape()));

  if (b.rank() == 2) {
    // Fold every leading dimension of a into the row count.
    const std::size_t rows = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<T> out(rows * n);
    kernels::gemm(Trans::No, Trans::No, rows, n, k, a.data().data(), b.data().data(), out.data(), false);
    return make_result<T>(std::move(out_shape), std::move(out), "matmul", {&a, &b},
                          [a, b, rows, n, k](detail::Node<T>& self) {
                            const T* g = self.grad.data();
                            if (auto* ga = grad_of(a))
                              kernels::gemm(Trans::No, Trans::Yes, rows, k, n, g, b.data().data(), ga->data(), true);
                            if (auto* gb = grad_of(b))
                              kernels::gemm(Trans::Yes, Trans::No, k, n, rows, a.data().data(), g, gb->data(), true);
                          });
  }

  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape(a_batch, b_batch, "matmul");
  const auto sa = broadcast_strides(a_batch, batch);
  const auto sb = broadcast_strides(b_batch, batch);
  const std::size_t nb = shape_numel(batch);
  std::vector<std::size_t> off_a(nb), off_b(nb);
  for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    off_a[o] = ia * m * k;
    off_b[o] = ib * k * n;
  });
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(nb * m * n);
  {
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    for (std::size_t i = 0; i < nb; ++i)
      kernels::gemm(Trans::No, Trans::No, m, n, k, ap + off_a[i], bp + off_b[i], out.data() + i * m * n, false);
  }
  return make_result<T>(std::move(out_shape), std::move(out), "matmul", {&a, &b},
                        [a, b, m, n, k, nb, off_a, off_b](detail::Node<T>& self) {
                          const T* g = self.grad.data();
                          auto* ga = grad_of(a);
                          auto* gb = grad_of(b);
                          // Broadcast operands accumulate across batches in a fixed order.
                          for (std::size_t i = 0; i < nb; ++i) {
                            const T* gi = g + i * m * n;
                            if (ga)
                              kernels::gemm(Trans::No, Trans::Yes, m, k, n, gi, b.data().data() + off_b[i],
                                                    ga->data() + off_a[i], true);
                            if (gb)
                              kernels::gemm(Trans::Yes, Trans::No, k, n, m, a.data().data() + off_a[i], gi,
                                                    gb->data() + off_b[i], true);
                          }
                        });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {&x}, [x](detail::Node<T>& self) {
    if (auto* gx = grad_of(x))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw DimensionError("permute rank mismatch for " + shape_str(in));
  std::vector<bool> used(r, false);
  for (auto ax : axes) {
    if (ax >= r || used[ax]) throw DimensionError("permute axes are not a permutation");
    used[ax] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r), src_strides(r);
  std::size_t s = 1;
  for (std::size_t d = r; d-- > 0;) {
    in_strides[d] = s;
    s *= in[d];
  }
  for (std::size_t d = 0; d < r; ++d) {
    out_shape[d] = in[axes[d]];
    src_strides[d] = in_strides[axes[d]];
  }
  // Gather map from output offset to input offset, reused by backward.
  std::vector<std::size_t> src(x.numel());
  const std::vector<std::size_t> zero(r, 0);
  for_each_broadcast(out_shape, src_strides, zero, [&](std::size_t o, std::size_t i, std::size_t) { src[o] = i; });
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[src[o]];
  return make_result<T>(std::move(out_shape), std::move(out), "permute", {&x},
                        [x, src = std::move(src)](detail::Node<T>& self) {
                          if (auto* gx = grad_of(x))
                            for (std::size_t o = 0; o < src.size(); ++o) (*gx)[src[o]] += self.grad[o];
                        });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t start, std::size_t len) {
  const std::size_t d = x.dim(-1);
  if (len == 0 || start + len > d)
    throw DimensionError("slice [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  std::vector<T> out(rows * len);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.begin() + static_cast<long>(r * d + start), len, out.begin() + static_cast<long>(r * len));
  return make_result<T>(std::move(out_shape), std::move(out), "slice", {&x},
                        [x, rows, d, start, len](detail::Node<T>& self) {
                          if (auto* gx = grad_of(x))
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < len; ++j) (*gx)[r * d + start + j] += self.grad[r * len + j];
                        });
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  if (parts.size() == 1) return parts.front();
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (pl != lead)
      throw DimensionError("concat leading shapes differ: " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    total += p.dim(-1);
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> out(rows * total);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(-1);
    auto pv = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.begin() + static_cast<long>(r * w), w, out.begin() + static_cast<long>(r * total + col));
    col += w;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(out_shape);
  node->value = std::move(out);
  node->op = "concat";
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (grad_enabled() && any) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [parts, rows, total](detail::Node<T>& self) {
      std::size_t col = 0;
      for (const auto& p : parts) {
        const std::size_t w = p.dim(-1);
        if (auto* gp = grad_of(p))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) (*gp)[r * w + j] += self.grad[r * total + col + j];
        col += w;
      }
    };
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int32_t> ids, Shape prefix) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a 2-D table, got " + shape_str(table.shape()));
  if (shape_numel(prefix) != ids.size())
    throw DimensionError("gather_rows: prefix " + shape_str(prefix) + " does not match " +
                         std::to_string(ids.size()) + " ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw DimensionError("row id " + std::to_string(ids[i]) + " outside table of " + std::to_string(vocab) + " rows");
    std::copy_n(tv.begin() + static_cast<long>(ids[i]) * static_cast<long>(d), d, out.begin() + static_cast<long>(i * d));
  }
  prefix.push_back(d);
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_result<T>(std::move(prefix), std::move(out), "gather", {&table},
                        [table, saved = std::move(saved), d](detail::Node<T>& self) {
                          if (auto* gt = grad_of(table))
                            for (std::size_t i = 0; i < saved.size(); ++i)
                              for (std::size_t j = 0; j < d; ++j)
                                (*gt)[static_cast<std::size_t>(saved[i]) * d + j] += self.grad[i * d + j];
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[ax];
  std::vector<T> out(x.numel());
  auto xv = x.data();
  bool ok = true;
  if (inner == 1) {
    ok = kernels::softmax_rows(xv.data(), out.data(), outer, len);
  } else {
    std::vector<T> row(len), res(len);
    for (std::size_t o = 0; o < outer && ok; ++o)
      for (std::size_t in = 0; in < inner && ok; ++in) {
        for (std::size_t j = 0; j < len; ++j) row[j] = xv[(o * len + j) * inner + in];
        ok = kernels::softmax_rows(row.data(), res.data(), 1, len);
        for (std::size_t j = 0; j < len; ++j) out[(o * len + j) * inner + in] = res[j];
      }
  }
  if (!ok) {
    // NaN never wins a max, so an all-NaN slice looks fully masked.
    for (T v : xv)
      if (std::isnan(v)) throw NumericError("softmax input contains NaN");
    throw MaskError("softmax over a fully masked slice (every logit is -inf)");
  }
  return make_result<T>(s, std::move(out), "softmax", {&x}, [x, outer, inner, len](detail::Node<T>& self) {
    auto* gx = grad_of(x);
    if (!gx) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = (o * len + j) * inner + in;
          dot += g[idx] * y[idx];
        }
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = (o * len + j) * inner + in;
          (*gx)[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

template <typename T>
Tensor<T> masked_fill_last2(const Tensor<T>& x, std::span<const std::uint8_t> keep, std::size_t rows,
                            std::size_t cols, T value) {
  if (x.rank() < 2 || x.dim(-2) != rows || x.dim(-1) != cols || keep.size() != rows * cols)
    throw DimensionError("mask of " + std::to_string(rows) + "x" + std::to_string(cols) + " does not fit " +
                         shape_str(x.shape()));
  const std::size_t mat = rows * cols;
  const std::size_t nb = x.numel() / mat;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < mat; ++i)
      if (!keep[i]) out[b * mat + i] = value;
  std::vector<std::uint8_t> saved(keep.begin(), keep.end());
  return make_result<T>(x.shape(), std::move(out), "masked_fill", {&x},
                        [x, saved = std::move(saved), mat, nb](detail::Node<T>& self) {
                          if (auto* gx = grad_of(x))
                            for (std::size_t b = 0; b < nb; ++b)
                              for (std::size_t i = 0; i < mat; ++i)
                                if (saved[i]) (*gx)[b * mat + i] += self.grad[b * mat + i];
                        });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return make_result<T>(Shape{1}, std::vector<T>{acc}, "sum", {&x}, [x](detail::Node<T>& self) {
    if (auto* gx = grad_of(x))
      for (auto& g : *gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
  const std::size_t ax = norm_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = s[ax];
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d)
    if (d != ax) out_shape.push_back(s[d]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<T> out(outer * inner, T(0));
  auto xv = x.data();
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += xv[(o * len + j) * inner + in];
    for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] *= inv;
  }
  return make_result<T>(std::move(out_shape), std::move(out), "mean_axis", {&x},
                        [x, outer, inner, len, inv](detail::Node<T>& self) {
                          if (auto* gx = grad_of(x))
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t j = 0; j < len; ++j)
                                for (std::size_t in = 0; in < inner; ++in)
                                  (*gx)[(o * len + j) * inner + in] += self.grad[o * inner + in] * inv;
                        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, "relu", [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return unary(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, "sigmoid", [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, "silu", [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.defined() && gamma.numel() != d) throw DimensionError("layer_norm gamma size mismatch");
  if (beta.defined() && beta.numel() != d) throw DimensionError("layer_norm beta size mismatch");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * (gamma.defined() ? gamma.at(j) : T(1)) + (beta.defined() ? beta.at(j) : T(0));
    }
  }
  return make_result<T>(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta},
                        [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](detail::Node<T>& self) {
                          const auto& g = self.grad;
                          auto* gx = grad_of(x);
                          auto* gg = grad_of(gamma);
                          auto* gb = grad_of(beta);
                          std::vector<T> dh(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T mean_dh = 0, mean_dh_h = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const T gj = g[r * d + j];
                              const T h = xhat[r * d + j];
                              if (gg) (*gg)[j] += gj * h;
                              if (gb) (*gb)[j] += gj;
                              dh[j] = gj * (gamma.defined() ? gamma.at(j) : T(1));
                              mean_dh += dh[j];
                              mean_dh_h += dh[j] * h;
                            }
                            if (!gx) continue;
                            mean_dh /= static_cast<T>(d);
                            mean_dh_h /= static_cast<T>(d);
                            for (std::size_t j = 0; j < d; ++j)
                              (*gx)[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
                          }
                        });
}

template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gamma, T eps) {
  const std::size_t d = x.dim(-1);
  if (gamma.defined() && gamma.numel() != d) throw DimensionError("rms_norm gamma size mismatch");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel()), rinv(rows);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += xv[r * d + j] * xv[r * d + j];
    ms /= static_cast<T>(d);
    rinv[r] = T(1) / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = xv[r * d + j] * rinv[r] * (gamma.defined() ? gamma.at(j) : T(1));
  }
  return make_result<T>(x.shape(), std::move(out), "rms_norm", {&x, &gamma},
                        [x, gamma, rinv = std::move(rinv), rows, d](detail::Node<T>& self) {
                          const auto& g = self.grad;
                          auto xv = x.data();
                          auto* gx = grad_of(x);
                          auto* gg = grad_of(gamma);
                          std::vector<T> dh(d);
                          for (std::size_t r = 0; r < rows; ++r) {
                            T dot = 0;
                            for (std::size_t j = 0; j < d; ++j) {
                              const T xj = xv[r * d + j];
                              if (gg) (*gg)[j] += g[r * d + j] * xj * rinv[r];
                              dh[j] = g[r * d + j] * (gamma.defined() ? gamma.at(j) : T(1));
                              dot += dh[j] * xj;
                            }
                            if (!gx) continue;
                            const T c = rinv[r] * rinv[r] * dot / static_cast<T>(d);
                            for (std::size_t j = 0; j < d; ++j) (*gx)[r * d + j] += rinv[r] * (dh[j] - xv[r * d + j] * c);
                          }
                        });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  if (!train || p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> factor(x.numel());
  for (auto& f : factor) f = rng.bernoulli(p) ? T(0) : keep_scale;
  auto xv = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor[i];
  return make_result<T>(x.shape(), std::move(out), "dropout", {&x}, [x, factor = std::move(factor)](detail::Node<T>& self) {
    if (auto* gx = grad_of(x))
      for (std::size_t i = 0; i < factor.size(); ++i) (*gx)[i] += self.grad[i] * factor[i];
  });
}

template <typename T>
Tensor<T> pairwise_bilinear(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.rank() < 3 || q.shape() != k.shape())
    throw DimensionError("pairwise_bilinear needs matching [..., n, r, p] operands, got " + shape_str(q.shape()) +
                         " and " + shape_str(k.shape()));
  const std::size_t n = q.dim(-3), r = q.dim(-2), p = q.dim(-1);
  const std::size_t nb = q.numel() / (n * r * p);
  Shape out_shape(q.shape().begin(), q.shape().end() - 3);
  out_shape.insert(out_shape.end(), {n, n, r});
  std::vector<T> out(nb * n * n * r);
  for (std::size_t b = 0; b < nb; ++b)
    kernels::pairwise_bilinear(q.data().data() + b * n * r * p, k.data().data() + b * n * r * p,
                               out.data() + b * n * n * r, n, r, p);
  return make_result<T>(std::move(out_shape), std::move(out), "pairwise_bilinear", {&q, &k},
                        [q, k, n, r, p, nb](detail::Node<T>& self) {
                          auto* gq = grad_of(q);
                          auto* gk = grad_of(k);
                          // q and k may be the same node (symmetric relations); both
                          // contributions then land in one buffer.
                          std::vector<T> scratch_q, scratch_k;
                          T* dq = gq ? gq->data() : (scratch_q.assign(q.numel(), T(0)), scratch_q.data());
                          T* dk = gk ? gk->data() : (scratch_k.assign(k.numel(), T(0)), scratch_k.data());
                          for (std::size_t b = 0; b < nb; ++b) {
                            const std::size_t qo = b * n * r * p;
                            kernels::pairwise_bilinear_backward(self.grad.data() + b * n * n * r, q.data().data() + qo,
                                                                k.data().data() + qo, dq + qo, dk + qo, n, r, p);
                          }
                        });
}

template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::span<const int> positions, double base) {
  if (x.rank() < 2) throw DimensionError("rope needs rank >= 2");
  const std::size_t n = x.dim(-2), d = x.dim(-1);
  if (d % 2 != 0) throw DimensionError("rope needs an even feature dimension, got " + std::to_string(d));
  if (positions.size() != n) throw DimensionError("rope: positions do not match sequence length");
  const std::size_t half = d / 2;
  std::vector<T> cs(n * half), sn(n * half);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < half; ++t) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(d));
      const double ang = static_cast<double>(positions[i]) * freq;
      cs[i * half + t] = static_cast<T>(std::cos(ang));
      sn[i * half + t] = static_cast<T>(std::sin(ang));
    }
  const std::size_t nb = x.numel() / (n * d);
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < half; ++t) {
        const std::size_t o = (b * n + i) * d + 2 * t;
        const T c = cs[i * half + t], s = sn[i * half + t];
        out[o] = xv[o] * c - xv[o + 1] * s;
        out[o + 1] = xv[o] * s + xv[o + 1] * c;
      }
  return make_result<T>(x.shape(), std::move(out), "rope", {&x},
                        [x, cs = std::move(cs), sn = std::move(sn), nb, n, half, d](detail::Node<T>& self) {
                          auto* gx = grad_of(x);
                          if (!gx) return;
                          const auto& g = self.grad;
                          for (std::size_t b = 0; b < nb; ++b)
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t t = 0; t < half; ++t) {
                                const std::size_t o = (b * n + i) * d + 2 * t;
                                const T c = cs[i * half + t], s = sn[i * half + t];
                                (*gx)[o] += g[o] * c + g[o + 1] * s;
                                (*gx)[o + 1] += -g[o] * s + g[o + 1] * c;
                              }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets, std::int32_t ignore_index) {
  const std::size_t c = logits.dim(-1);
  const std::size_t rows = logits.numel() / c;
  if (targets.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                         " rows");
  auto lv = logits.data();
  std::vector<T> probs(logits.numel());
  T total = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* lr = lv.data() + r * c;
    T mx = *std::max_element(lr, lr + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(lr[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(lr[j] - lse);
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c)
      throw DimensionError("target " + std::to_string(targets[r]) + " outside " + std::to_string(c) + " classes");
    total += lse - lr[targets[r]];
    ++count;
  }
  const T loss = count ? total / static_cast<T>(count) : T(0);
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_result<T>(Shape{1}, std::vector<T>{loss}, "cross_entropy", {&logits},
                        [logits, probs = std::move(probs), saved = std::move(saved), rows, c, count,
                         ignore_index](detail::Node<T>& self) {
                          auto* gl = grad_of(logits);
                          if (!gl || count == 0) return;
                          const T w = self.grad[0] / static_cast<T>(count);
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (saved[r] == ignore_index) continue;
                            for (std::size_t j = 0; j < c; ++j) (*gl)[r * c + j] += w * probs[r * c + j];
                            (*gl)[r * c + static_cast<std::size_t>(saved[r])] -= w;
                          }
                        });
}

#define DAT_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                       \
  template Tensor<T> transpose_last2(const Tensor<T>&);                                                \
  template Tensor<T> slice_last(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> concat_last(const std::vector<Tensor<T>>&);                                       \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int32_t>, Shape);              \
  template Tensor<T> softmax(const Tensor<T>&, int);                                                   \
  template Tensor<T> masked_fill_last2(const Tensor<T>&, std::span<const std::uint8_t>, std::size_t,   \
                                       std::size_t, T);                                                \
  template Tensor<T> sum_all(const Tensor<T>&);                                                        \
  template Tensor<T> mean_all(const Tensor<T>&);                                                       \
  template Tensor<T> mean_axis(const Tensor<T>&, int);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                           \
  template Tensor<T> gelu(const Tensor<T>&);                                                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                           \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                        \
  template Tensor<T> silu(const Tensor<T>&);                                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> rms_norm(const Tensor<T>&, const Tensor<T>&, T);                                  \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                                    \
  template Tensor<T> pairwise_bilinear(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> rope(const Tensor<T>&, std::span<const int>, double);                             \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, std::int32_t);

DAT_INSTANTIATE_OPS(float)
DAT_INSTANTIATE_OPS(double)

}  // namespace dat
