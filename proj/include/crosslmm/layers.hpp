#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crosslmm/ops.hpp"
#include "crosslmm/tensor.hpp"

namespace crosslmm {

struct AttentionWeights {
  Tensor wq, wk, wv, wo;  // each [d×d], applied as x·W
};

struct MlpWeights {
  Tensor w_up, b_up, w_down, b_down;
};

/// Pre-norm transformer block: h = x + Attn(LN1(x)); out = h + MLP(LN2(h)).
struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  AttentionWeights attn;
  Tensor ln2_gain, ln2_bias;
  MlpWeights mlp;
};

/// Receives every attention probability matrix (one per head) as it is formed.
using AttentionObserver =
    std::function<void(std::string_view site, const Tensor& probs)>;

/// Rotated keys and values of positions already processed.
struct KvCache {
  Tensor k, v;
  std::size_t length() const { return k.defined() ? k.rows() : 0; }
};

struct SelfAttentionOptions {
  std::size_t n_heads = 1;
  bool causal = true;
  std::optional<double> rope_base;  // no rotary encoding when empty
  std::size_t position_offset = 0;  // sequence position of the first row
  KvCache* cache = nullptr;         // appended to and attended over when set
  const AttentionObserver* observer = nullptr;
  std::string_view site = "self";
};

/// Scaled dot-product attention split over heads; returns the concatenated
/// per-head outputs before the output projection.
inline Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k,
                                   const Tensor& v, std::size_t n_heads,
                                   std::optional<ops::CausalMask> mask,
                                   const AttentionObserver* observer,
                                   std::string_view site) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " +
                         shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  const std::size_t dk = d / n_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = n_heads == 1 ? q : ops::slice_cols(tape, q, h * dk, (h + 1) * dk);
    const Tensor kh = n_heads == 1 ? k : ops::slice_cols(tape, k, h * dk, (h + 1) * dk);
    const Tensor vh = n_heads == 1 ? v : ops::slice_cols(tape, v, h * dk, (h + 1) * dk);
    Tensor scores = ops::scale(tape, ops::matmul(tape, qh, ops::transpose(tape, kh)),
                               inv_sqrt_dk);
    Tensor probs = ops::softmax_rows(tape, scores, mask);
    if (observer && *observer) (*observer)(site, probs);
    heads.push_back(ops::matmul(tape, probs, vh));
  }
  return n_heads == 1 ? heads.front() : ops::concat_cols(tape, heads);
}

inline Tensor self_attention(Tape& tape, const Tensor& x,
                             const AttentionWeights& w,
                             const SelfAttentionOptions& opt) {
  Tensor q = ops::matmul(tape, x, w.wq);
  Tensor k = ops::matmul(tape, x, w.wk);
  Tensor v = ops::matmul(tape, x, w.wv);
  if (opt.rope_base) {
    q = ops::rope(tape, q, opt.n_heads, opt.position_offset, *opt.rope_base);
    k = ops::rope(tape, k, opt.n_heads, opt.position_offset, *opt.rope_base);
  }
  if (opt.cache) {
    if (opt.cache->length() != opt.position_offset)
      throw ContractError("self_attention: cache holds " +
                          std::to_string(opt.cache->length()) +
                          " positions but rows start at " +
                          std::to_string(opt.position_offset));
    if (opt.cache->length() > 0) {
      k = ops::concat_rows(tape, {opt.cache->k, k});
      v = ops::concat_rows(tape, {opt.cache->v, v});
    }
    opt.cache->k = k;
    opt.cache->v = v;
  }
  std::optional<ops::CausalMask> mask;
  if (opt.causal) mask = ops::CausalMask{opt.position_offset};
  Tensor heads =
      multi_head_attention(tape, q, k, v, opt.n_heads, mask, opt.observer, opt.site);
  return ops::matmul(tape, heads, w.wo);
}

inline Tensor mlp(Tape& tape, const Tensor& x, const MlpWeights& w) {
  Tensor h = ops::gelu(tape, ops::add_row(tape, ops::matmul(tape, x, w.w_up), w.b_up));
  return ops::add_row(tape, ops::matmul(tape, h, w.w_down), w.b_down);
}

/// Attention sub-layer of a pre-norm block: x + Attn(LN1(x)).
inline Tensor attention_sublayer(Tape& tape, const Tensor& x, const BlockParams& p,
                                 const SelfAttentionOptions& opt, double eps) {
  Tensor normed = ops::layer_norm(tape, x, p.ln1_gain, p.ln1_bias, eps);
  return ops::add(tape, x, self_attention(tape, normed, p.attn, opt));
}

/// MLP sub-layer of a pre-norm block: h + MLP(LN2(h)).
inline Tensor mlp_sublayer(Tape& tape, const Tensor& h, const BlockParams& p,
                           double eps) {
  Tensor normed = ops::layer_norm(tape, h, p.ln2_gain, p.ln2_bias, eps);
  return ops::add(tape, h, mlp(tape, normed, p.mlp));
}

inline Tensor block_forward(Tape& tape, const Tensor& x, const BlockParams& p,
                            const SelfAttentionOptions& opt, double eps) {
  return mlp_sublayer(tape, attention_sublayer(tape, x, p, opt, eps), p, eps);
}

}  // namespace crosslmm
