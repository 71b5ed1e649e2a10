// Copyright 2026 The dualattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dat/attention.hpp"
#include "dat/model.hpp"

// Independent oracles. The reference_* functions are literal loop
// implementations over plain arrays: they read parameter values but share no
// code with the attention and model modules, and they apply W_r before
// attending (the unfactored order).

namespace dat::verify {

// Row-major dense matrix of doubles.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

Mat to_mat(const Tensor<double>& t);  // rank-2 tensor

enum class Mode { Sensory, Relational, Dual, Rca };

// Symbols for one sequence: per-position [n, d] or per-pair [n*n, d]
// (row i*n+j holds s_{j-i}).
struct RefSymbols {
  bool per_pair = false;
  Mat values;
};

struct RefAttentionOut {
  Mat y;                               // [n, width of the mode]
  std::vector<double> relations;       // [n, n, d_r] when computed
};

// Where W_r^h is applied: to each r_ij before the attention sum (Literal)
// or once to the attended relation vector (Factored).
enum class Order { Literal, Factored };

// One unbatched sequence x [n, d_model]. Dropout is never applied.
RefAttentionOut reference_attention(const DualAttention<double>& layer, const Mat& x, const RefSymbols* symbols,
                                    const AttentionMask& mask, Mode mode, Order order = Order::Literal);

// Symbol assignment by loops, for one sequence.
RefSymbols reference_symbols(const SymbolLibrary<double>& lib, const Mat& x);

// Eval-mode logits of a token model (EncoderOnly, DecoderOnly,
// EncoderDecoder) for one sequence, recomputed from named parameters.
// EncoderOnly returns [1, n_classes]; LMs return [len, vocab].
Mat reference_forward(const ModelConfig& cfg, const ParamList<double>& params, const std::vector<std::int32_t>& src,
                      const std::vector<std::int32_t>& tgt = {});

// ---- select-then-relate --------------------------------------------------

// Bilinear family: u(x, y) = x^T A y and Rel_l(x, y) = x^T B_l y.
struct BilinearForms {
  std::size_t dim = 0;
  Mat A;
  std::vector<Mat> B;
};

struct SelectRelateSpec {
  std::size_t dim = 0;
  std::size_t d_r = 0;
  std::function<double(const std::vector<double>&, const std::vector<double>&)> utility;
  std::function<std::vector<double>(const std::vector<double>&, const std::vector<double>&)> relation;
  std::optional<BilinearForms> bilinear;  // set when the spec is bilinear

  static SelectRelateSpec from_bilinear(BilinearForms forms);
};

// Rel(x, argmax_y u(x, y)). Throws SelectionError when the two best
// utilities are within tie_tol.
std::vector<double> oracle_select_then_relate(const SelectRelateSpec& spec, const std::vector<double>& x,
                                              const std::vector<std::vector<double>>& ys, double tie_tol = 1e-9);

// Index of the selected element, by the same argmax.
std::size_t select_index(const SelectRelateSpec& spec, const std::vector<double>& x,
                         const std::vector<std::vector<double>>& ys, double tie_tol = 1e-9);

// Gap between the best and second-best utility (infinity for one candidate).
double selection_margin(const SelectRelateSpec& spec, const std::vector<double>& x,
                        const std::vector<std::vector<double>>& ys);

// A relational-attention layer whose output at the query position
// approximates Rel(x, Select(x, y)). Query and context are packed as the
// sequence [x; y_1..y_n]; the query row attends to the context only.
class RaApproximant {
 public:
  RaApproximant(const SelectRelateSpec& spec, double beta);

  std::vector<double> evaluate(const std::vector<double>& x, const std::vector<std::vector<double>>& ys) const;

  const DualAttention<double>& layer() const { return layer_; }
  std::size_t d_model() const { return d_model_; }

 private:
  std::size_t dim_, d_r_, d_model_;
  DualAttention<double> layer_;
};

RaApproximant construct_ra_approximant(const SelectRelateSpec& spec, double beta);

// ---- gradient checks -----------------------------------------------------

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<ParamCheck> params;
  double threshold = 1e-4;
  bool passed() const;
  std::vector<std::string> failing() const;
};

// Relative error used by every finite-difference check here:
// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-7);

struct GradcheckOptions {
  // Fourth-order central stencil (f(x-2h), f(x-h), f(x+h), f(x+2h)). The
  // two-point rule at h = 1e-5 loses ~1e-11 absolute to cancellation, which
  // is above 1e-4 relative for entries near the 1e-7 floor.
  bool fourth_order = true;
  double h = 1e-3;
  double threshold = 1e-4;
  double param_std = 0.3;              // parameters are redrawn at this scale
  std::size_t max_entries_per_param = 0;  // 0 checks every entry
};

// Central differences of a cross-entropy loss w.r.t. every parameter of a
// freshly built f64 model on a random batch.
GradcheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed, const GradcheckOptions& opt = {});

// Gradcheck of a scalar function of a set of f64 tensors (used for ops).
double gradcheck_fn(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> inputs,
                    double h = 1e-5, double floor = 1e-7);

}  // namespace dat::verify
