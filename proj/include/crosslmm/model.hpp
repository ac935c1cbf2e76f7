#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crosslmm/config.hpp"
#include "crosslmm/error.hpp"
#include "crosslmm/layers.hpp"
#include "crosslmm/ops.hpp"
#include "crosslmm/tensor.hpp"
#include "crosslmm/vision.hpp"

namespace crosslmm {

/// Parameter groups; freezing and gradient reports work at this granularity.
enum class ParamGroup { encoder, projector, llm, v2v, t2v };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::encoder, ParamGroup::projector,
                                            ParamGroup::llm, ParamGroup::v2v,
                                            ParamGroup::t2v};

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::projector: return "projector";
    case ParamGroup::llm: return "llm";
    case ParamGroup::v2v: return "v2v";
    case ParamGroup::t2v: return "t2v";
  }
  return "?";
}

inline ParamGroup param_group_from_string(const std::string& s) {
  for (ParamGroup g : kAllGroups)
    if (s == to_string(g)) return g;
  throw ConfigError("unknown parameter group \"" + s + "\"");
}

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

/// One cross-attention direction (V2V or T2V) inside a DCAL.
struct CrossBranchParams {
  Tensor wq, wo;
  Tensor gamma_raw;  // scalar; effective gate is clamp(gamma_raw, -1, 1)
};

/// Dual cross-attention layer parameters. Both branches attend over the same
/// key/value projections of the original visual tokens.
struct DcalParams {
  Tensor norm_gain, norm_bias;  // post-norm producing I′
  Tensor wk, wv;
  std::optional<CrossBranchParams> v2v, t2v;
};

/// Positions of the original visual tokens: one row per frame plus separable
/// row/column tables over the patch grid.
struct CrossPositionParams {
  Tensor temporal, grid_row, grid_col;
};

struct ModelParams {
  VisionParams vision;
  ProjectorParams projector;
  Tensor embed;  // [vocab × hidden]
  std::vector<BlockParams> layers;
  std::vector<std::optional<DcalParams>> dcal;  // indexed by layer - 1
  std::optional<CrossPositionParams> cross_pos;
  Tensor final_gain, final_bias, lm_head;
};

namespace detail {

struct ParamInit {
  Shape shape;
  enum class Kind { uniform, constant } kind = Kind::uniform;
  double value = 0.0;  // half-width for uniform, fill value for constant
};

inline ParamInit linear_init(std::size_t in, std::size_t out) {
  return {{in, out}, ParamInit::Kind::uniform, 1.0 / std::sqrt(static_cast<double>(in))};
}
inline ParamInit fill_init(Shape shape, double v) {
  return {std::move(shape), ParamInit::Kind::constant, v};
}
inline ParamInit small_init(Shape shape, double a) {
  return {std::move(shape), ParamInit::Kind::uniform, a};
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <class Block, class F>
void visit_block(Block& b, const std::string& prefix, ParamGroup g, std::size_t d,
                 std::size_t ffn, F& f) {
  f(prefix + ".ln1.gain", g, b.ln1_gain, fill_init({d}, 1.0));
  f(prefix + ".ln1.bias", g, b.ln1_bias, fill_init({d}, 0.0));
  f(prefix + ".attn.wq", g, b.attn.wq, linear_init(d, d));
  f(prefix + ".attn.wk", g, b.attn.wk, linear_init(d, d));
  f(prefix + ".attn.wv", g, b.attn.wv, linear_init(d, d));
  f(prefix + ".attn.wo", g, b.attn.wo, linear_init(d, d));
  f(prefix + ".ln2.gain", g, b.ln2_gain, fill_init({d}, 1.0));
  f(prefix + ".ln2.bias", g, b.ln2_bias, fill_init({d}, 0.0));
  f(prefix + ".mlp.w_up", g, b.mlp.w_up, linear_init(d, ffn));
  f(prefix + ".mlp.b_up", g, b.mlp.b_up, fill_init({ffn}, 0.0));
  f(prefix + ".mlp.w_down", g, b.mlp.w_down, linear_init(ffn, d));
  f(prefix + ".mlp.b_down", g, b.mlp.b_down, fill_init({d}, 0.0));
}

/// Visits every parameter slot in canonical order. `f(name, group, slot, init)`.
template <class Params, class F>
void for_each_param(Params& p, const ModelConfig& cfg, F&& f) {
  const std::size_t D = cfg.vision_dim, H = cfg.hidden;
  f(std::string("vision.patch_embed"), ParamGroup::encoder, p.vision.patch_embed,
    small_init({cfg.patch_values(), D}, 0.02));
  f(std::string("vision.pos_embed"), ParamGroup::encoder, p.vision.pos_embed,
    small_init({cfg.tokens_per_frame(), D}, 0.02));
  for (std::size_t i = 0; i < p.vision.blocks.size(); ++i)
    visit_block(p.vision.blocks[i], "vision.blocks." + std::to_string(i),
                ParamGroup::encoder, D, cfg.vision_ffn, f);

  const ParamGroup pg = ParamGroup::projector;
  f(std::string("projector.w1"), pg, p.projector.w1, linear_init(D, cfg.projector_hidden));
  f(std::string("projector.b1"), pg, p.projector.b1, fill_init({cfg.projector_hidden}, 0.0));
  f(std::string("projector.w2"), pg, p.projector.w2, linear_init(cfg.projector_hidden, H));
  f(std::string("projector.b2"), pg, p.projector.b2, fill_init({H}, 0.0));
  f(std::string("projector.norm.gain"), pg, p.projector.ln_gain, fill_init({H}, 1.0));
  f(std::string("projector.norm.bias"), pg, p.projector.ln_bias, fill_init({H}, 0.0));

  f(std::string("llm.embed"), ParamGroup::llm, p.embed, small_init({cfg.vocab, H}, 1.0));
  const ParamGroup shared = cfg.v2v_enabled ? ParamGroup::v2v : ParamGroup::t2v;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string prefix = "llm.layers." + std::to_string(i);
    visit_block(p.layers[i], prefix, ParamGroup::llm, H, cfg.ffn, f);
    auto& dc = p.dcal[i];
    if (!dc) continue;
    f(prefix + ".dcal.norm.gain", shared, dc->norm_gain, fill_init({H}, 1.0));
    f(prefix + ".dcal.norm.bias", shared, dc->norm_bias, fill_init({H}, 0.0));
    f(prefix + ".dcal.wk", shared, dc->wk, linear_init(H, H));
    f(prefix + ".dcal.wv", shared, dc->wv, linear_init(H, H));
    if (dc->v2v) {
      f(prefix + ".dcal.v2v.wq", ParamGroup::v2v, dc->v2v->wq, linear_init(H, H));
      f(prefix + ".dcal.v2v.wo", ParamGroup::v2v, dc->v2v->wo, linear_init(H, H));
      f(prefix + ".dcal.v2v.gamma_raw", ParamGroup::v2v, dc->v2v->gamma_raw,
        fill_init({1}, cfg.gamma_init));
    }
    if (dc->t2v) {
      f(prefix + ".dcal.t2v.wq", ParamGroup::t2v, dc->t2v->wq, linear_init(H, H));
      f(prefix + ".dcal.t2v.wo", ParamGroup::t2v, dc->t2v->wo, linear_init(H, H));
      f(prefix + ".dcal.t2v.gamma_raw", ParamGroup::t2v, dc->t2v->gamma_raw,
        fill_init({1}, cfg.gamma_init));
    }
  }
  if (p.cross_pos) {
    f(std::string("dcal.temporal"), shared, p.cross_pos->temporal,
      small_init({cfg.max_frames, H}, 0.02));
    f(std::string("dcal.grid_row"), shared, p.cross_pos->grid_row,
      small_init({cfg.grid, H}, 0.02));
    f(std::string("dcal.grid_col"), shared, p.cross_pos->grid_col,
      small_init({cfg.grid, H}, 0.02));
  }
  f(std::string("llm.final_norm.gain"), ParamGroup::llm, p.final_gain, fill_init({H}, 1.0));
  f(std::string("llm.final_norm.bias"), ParamGroup::llm, p.final_bias, fill_init({H}, 0.0));
  f(std::string("llm.lm_head"), ParamGroup::llm, p.lm_head, linear_init(H, cfg.vocab));
}

inline ModelParams skeleton(const ModelConfig& cfg) {
  ModelParams p;
  p.vision.blocks.resize(cfg.vision_layers);
  p.layers.resize(cfg.n_layers);
  p.dcal.resize(cfg.n_layers);
  for (std::size_t l = 1; l <= cfg.n_layers; ++l) {
    if (!cfg.is_dcal_layer(l)) continue;
    DcalParams d;
    if (cfg.v2v_enabled) d.v2v.emplace();
    if (cfg.t2v_enabled) d.t2v.emplace();
    p.dcal[l - 1] = std::move(d);
  }
  if (cfg.has_cross_attention()) p.cross_pos.emplace();
  return p;
}

}  // namespace detail

/// Model configuration together with its parameters.
struct Model {
  ModelConfig config;
  ModelParams params;

  /// Deterministic initialization. Each tensor draws from a stream seeded by
  /// (seed, parameter name), so structurally different configs share values
  /// for every parameter they have in common.
  static Model init(const ModelConfig& cfg) {
    cfg.validate();
    Model m{cfg, detail::skeleton(cfg)};
    detail::for_each_param(m.params, cfg, [&](const std::string& name, ParamGroup,
                                              Tensor& slot, const detail::ParamInit& init) {
      const std::uint64_t h = detail::fnv1a(name);
      std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                        static_cast<std::uint32_t>(cfg.seed >> 32),
                        static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
      std::mt19937_64 rng(seq);
      if (init.kind == detail::ParamInit::Kind::constant)
        slot = Tensor::filled(init.shape, init.value);
      else
        slot = random_uniform(init.shape, -init.value, init.value, rng);
      slot.set_requires_grad(true);
    });
    return m;
  }

  /// All parameters in canonical order.
  std::vector<NamedParam> named_params() const {
    std::vector<NamedParam> out;
    detail::for_each_param(params, config, [&](const std::string& name, ParamGroup g,
                                               const Tensor& slot, const detail::ParamInit&) {
      out.push_back({name, g, slot});
    });
    return out;
  }

  /// Expected (name, shape) list for this config, in canonical order.
  static std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, Shape>> out;
    ModelParams p = detail::skeleton(cfg);
    detail::for_each_param(p, cfg, [&](const std::string& name, ParamGroup, Tensor&,
                                       const detail::ParamInit& init) {
      out.emplace_back(name, init.shape);
    });
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const NamedParam& p : named_params()) n += p.tensor.numel();
    return n;
  }
};

/// [compressed visual ; text] embeddings with their span lengths.
struct SequenceState {
  Tensor x;
  std::size_t visual_len = 0;
  std::size_t text_len = 0;
  std::size_t length() const { return visual_len + text_len; }
};

/// Visual side of one forward pass.
struct VisualEncoding {
  std::size_t frames = 0;
  Tensor original;    // [T·N × D] encoder output
  Tensor compressed;  // [T·M × hidden] pooled then projected
  Tensor cross_base;  // [T·N × hidden] projected originals plus positions
};

/// Key/value projections of the original tokens for one DCAL.
struct CrossKv {
  Tensor k, v;
};

struct ForwardOptions {
  bool t2v_active = true;  // false excludes the T2V branch (first training stage)
  const AttentionObserver* observer = nullptr;
};

inline VisualEncoding encode_video(Tape& tape, const Model& model,
                                   const VideoFrames& video) {
  const ModelConfig& cfg = model.config;
  const ModelParams& p = model.params;
  const std::size_t T = video.frames();
  VisualEncoding enc;
  enc.frames = T;
  enc.original = vision_forward(tape, video, p.vision, cfg);
  Tensor pooled = pool_merge(tape, enc.original, T, cfg.grid, cfg.pool_window);
  enc.compressed = project(tape, pooled, p.projector, cfg.norm_eps);
  if (p.cross_pos) {
    if (T > cfg.max_frames)
      throw ConfigError(std::to_string(T) + " frames exceed max_frames " +
                        std::to_string(cfg.max_frames));
    const std::size_t G = cfg.grid;
    std::vector<int> frame_ids, row_ids, col_ids;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t y = 0; y < G; ++y)
        for (std::size_t x = 0; x < G; ++x) {
          frame_ids.push_back(static_cast<int>(t));
          row_ids.push_back(static_cast<int>(y));
          col_ids.push_back(static_cast<int>(x));
        }
    Tensor base = project(tape, enc.original, p.projector, cfg.norm_eps);
    base = ops::add(tape, base, ops::embedding_lookup(tape, p.cross_pos->temporal, frame_ids));
    base = ops::add(tape, base, ops::embedding_lookup(tape, p.cross_pos->grid_row, row_ids));
    base = ops::add(tape, base, ops::embedding_lookup(tape, p.cross_pos->grid_col, col_ids));
    enc.cross_base = base;
  }
  return enc;
}

/// Concatenates flattened compressed tokens with embedded text.
inline SequenceState build_sequence(Tape& tape, const Tensor& compressed,
                                    std::span<const int> text_ids,
                                    const Tensor& embed_table, std::size_t max_seq) {
  const std::size_t lv = compressed.rows(), lt = text_ids.size();
  if (lv + lt > max_seq)
    throw SequenceLengthError("sequence of " + std::to_string(lv) + " visual + " +
                              std::to_string(lt) + " text tokens exceeds max_seq " +
                              std::to_string(max_seq));
  if (compressed.cols() != embed_table.cols())
    throw DimensionError("build_sequence: visual width " + shape_str(compressed.shape()) +
                         " vs embedding table " + shape_str(embed_table.shape()));
  SequenceState s;
  s.visual_len = lv;
  s.text_len = lt;
  s.x = lt == 0 ? compressed
                : ops::concat_rows(tape, {compressed,
                                          ops::embedding_lookup(tape, embed_table, text_ids)});
  return s;
}

inline CrossKv cross_kv(Tape& tape, const Tensor& cross_base, const DcalParams& dcal) {
  if (!cross_base.defined())
    throw ContractError("cross-attention needs projected original tokens");
  return {ops::matmul(tape, cross_base, dcal.wk), ops::matmul(tape, cross_base, dcal.wv)};
}

/// Attn(Q, K, V)·w_o with Q = rows·w_q; no mask, every original token is visible.
inline Tensor cross_attend(Tape& tape, const Tensor& query_rows, const CrossKv& kv,
                           const CrossBranchParams& branch, std::size_t n_heads,
                           const AttentionObserver* observer, std::string_view site) {
  Tensor q = ops::matmul(tape, query_rows, branch.wq);
  Tensor heads = multi_head_attention(tape, q, kv.k, kv.v, n_heads, std::nullopt,
                                      observer, site);
  return ops::matmul(tape, heads, branch.wo);
}

namespace detail {

inline Tensor gated_branch(Tape& tape, const Tensor& normalized_rows,
                           const Tensor& residual_rows, const CrossKv& kv,
                           const CrossBranchParams& branch, const ModelConfig& cfg,
                           const AttentionObserver* observer, std::string_view site) {
  Tensor attn = cross_attend(tape, normalized_rows, kv, branch, cfg.n_heads, observer, site);
  Tensor gamma = ops::clamp(tape, branch.gamma_raw, -1.0, 1.0);
  if (cfg.gate_mode == GateMode::paper)
    return ops::add(tape, attn, ops::scale_by(tape, normalized_rows, gamma));
  return ops::add(tape, residual_rows, ops::scale_by(tape, attn, gamma));
}

}  // namespace detail

/// V2V: compressed visual rows of I′ query the original tokens. Returns the
/// updated visual span; text rows are never touched. `residual` is the
/// pre-norm stream used by GateMode::residual.
inline Tensor v2v_cross_attention(Tape& tape, const SequenceState& normalized,
                                  const Tensor& residual, const CrossKv& kv,
                                  const DcalParams& dcal, const ModelConfig& cfg,
                                  const AttentionObserver* observer = nullptr) {
  if (!dcal.v2v) throw ContractError("layer has no V2V branch");
  if (normalized.visual_len == 0) throw ContractError("V2V needs a visual span");
  const std::size_t lv = normalized.visual_len;
  return detail::gated_branch(tape, ops::slice_rows(tape, normalized.x, 0, lv),
                              ops::slice_rows(tape, residual, 0, lv), kv, *dcal.v2v,
                              cfg, observer, "v2v");
}

/// T2V: text rows of I′ query the original tokens. Returns the updated text
/// span, or an undefined tensor when there is no text.
inline Tensor t2v_cross_attention(Tape& tape, const SequenceState& normalized,
                                  const Tensor& residual, const CrossKv& kv,
                                  const DcalParams& dcal, const ModelConfig& cfg,
                                  const AttentionObserver* observer = nullptr) {
  if (!dcal.t2v) throw ContractError("layer has no T2V branch");
  if (normalized.text_len == 0) return {};
  const std::size_t lv = normalized.visual_len, end = normalized.length();
  return detail::gated_branch(tape, ops::slice_rows(tape, normalized.x, lv, end),
                              ops::slice_rows(tape, residual, lv, end), kv, *dcal.t2v,
                              cfg, observer, "t2v");
}

/// Decoder layer with dual cross-attention.
///
/// h = x + SelfAttn(LN1(x)); I′ = LN_dcal(h); V2V and T2V read I′ and write the
/// visual and text spans; the MLP sub-layer follows. A span whose branch is
/// inactive passes I′ (paper gate) or h (residual gate) through. `state` may
/// be a chunk of the sequence starting at `position_offset` when decoding
/// with a cache.
inline SequenceState dcal_forward(Tape& tape, const SequenceState& state,
                                  const BlockParams& layer, const DcalParams& dcal,
                                  const CrossKv& kv, const ModelConfig& cfg,
                                  const ForwardOptions& opts, KvCache* cache = nullptr,
                                  std::size_t position_offset = 0) {
  SelfAttentionOptions sa;
  sa.n_heads = cfg.n_heads;
  sa.rope_base = cfg.rope_base;
  sa.position_offset = position_offset;
  sa.cache = cache;
  sa.observer = opts.observer;
  const Tensor h = attention_sublayer(tape, state.x, layer, sa, cfg.norm_eps);

  const bool v2v_on = dcal.v2v.has_value();
  const bool t2v_on = dcal.t2v.has_value() && opts.t2v_active;
  Tensor y = h;
  if (v2v_on || t2v_on) {
    const SequenceState normalized{
        ops::layer_norm(tape, h, dcal.norm_gain, dcal.norm_bias, cfg.norm_eps),
        state.visual_len, state.text_len};
    const Tensor& pass = cfg.gate_mode == GateMode::paper ? normalized.x : h;
    std::vector<Tensor> spans;
    if (state.visual_len > 0) {
      spans.push_back(v2v_on ? v2v_cross_attention(tape, normalized, h, kv, dcal, cfg,
                                                   opts.observer)
                             : ops::slice_rows(tape, pass, 0, state.visual_len));
    }
    if (state.text_len > 0) {
      spans.push_back(t2v_on ? t2v_cross_attention(tape, normalized, h, kv, dcal, cfg,
                                                   opts.observer)
                             : ops::slice_rows(tape, pass, state.visual_len,
                                               state.length()));
    }
    y = spans.size() == 1 ? spans.front() : ops::concat_rows(tape, spans);
  }
  return {mlp_sublayer(tape, y, layer, cfg.norm_eps), state.visual_len, state.text_len};
}

/// Cross-attention K/V for every DCAL layer, computed once per forward.
inline std::vector<std::optional<CrossKv>> dcal_kv(Tape& tape, const Model& model,
                                                   const VisualEncoding& enc) {
  std::vector<std::optional<CrossKv>> kv(model.params.dcal.size());
  for (std::size_t i = 0; i < kv.size(); ++i)
    if (model.params.dcal[i]) kv[i] = cross_kv(tape, enc.cross_base, *model.params.dcal[i]);
  return kv;
}

/// Runs all decoder layers over `state` (a prefix or a cached continuation).
inline SequenceState decoder_stack(Tape& tape, const Model& model, SequenceState state,
                                   const std::vector<std::optional<CrossKv>>& kv,
                                   const ForwardOptions& opts,
                                   std::vector<KvCache>* caches = nullptr,
                                   std::size_t position_offset = 0) {
  const ModelConfig& cfg = model.config;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    KvCache* cache = caches ? &(*caches)[i] : nullptr;
    const auto& dcal = model.params.dcal[i];
    if (dcal) {
      state = dcal_forward(tape, state, model.params.layers[i], *dcal, *kv[i], cfg, opts,
                           cache, position_offset);
    } else {
      SelfAttentionOptions sa;
      sa.n_heads = cfg.n_heads;
      sa.rope_base = cfg.rope_base;
      sa.position_offset = position_offset;
      sa.cache = cache;
      sa.observer = opts.observer;
      state.x = block_forward(tape, state.x, model.params.layers[i], sa, cfg.norm_eps);
    }
  }
  return state;
}

inline Tensor lm_logits(Tape& tape, const Model& model, const Tensor& text_rows) {
  Tensor n = ops::layer_norm(tape, text_rows, model.params.final_gain,
                             model.params.final_bias, model.config.norm_eps);
  return ops::matmul(tape, n, model.params.lm_head);
}

/// End-to-end forward: encode, pool, project, build the sequence, run the
/// decoder and return logits for the text positions [L_t × vocab].
inline Tensor forward(Tape& tape, const Model& model, const VideoFrames& video,
                      std::span<const int> text_ids, const ForwardOptions& opts = {}) {
  if (text_ids.empty()) throw ContractError("forward needs at least one text token");
  VisualEncoding enc = encode_video(tape, model, video);
  auto kv = dcal_kv(tape, model, enc);
  SequenceState state =
      build_sequence(tape, enc.compressed, text_ids, model.params.embed, model.config.max_seq);
  state = decoder_stack(tape, model, state, kv, opts);
  Tensor text = ops::slice_rows(tape, state.x, state.visual_len, state.length());
  return lm_logits(tape, model, text);
}

inline int argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t n = logits.cols();
  const auto r = logits.data().subspan(row * n, n);
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

/// Greedy autoregressive decoding. Original-token K/V and self-attention
/// caches are built once at prefill; each step feeds one token.
inline std::vector<int> greedy_decode(const Model& model, const VideoFrames& video,
                                      std::span<const int> prompt_ids, std::size_t max_new) {
  if (max_new == 0) throw ContractError("max_new must be at least 1");
  if (prompt_ids.empty()) throw ContractError("greedy_decode needs a prompt");
  const ModelConfig& cfg = model.config;
  const std::size_t lv = video.frames() * cfg.pooled_per_frame();
  if (lv + prompt_ids.size() + max_new > cfg.max_seq)
    throw SequenceLengthError("decoding " + std::to_string(max_new) + " tokens after " +
                              std::to_string(lv + prompt_ids.size()) +
                              " positions exceeds max_seq " + std::to_string(cfg.max_seq));
  Tape tape(TapeOptions{.record = false});
  const ForwardOptions opts;
  VisualEncoding enc = encode_video(tape, model, video);
  auto kv = dcal_kv(tape, model, enc);
  std::vector<KvCache> caches(cfg.n_layers);

  SequenceState state = build_sequence(tape, enc.compressed, prompt_ids, model.params.embed,
                                       cfg.max_seq);
  std::size_t position = state.length();
  state = decoder_stack(tape, model, state, kv, opts, &caches, 0);
  Tensor last = ops::slice_rows(tape, state.x, state.length() - 1, state.length());
  std::vector<int> out{argmax_row(lm_logits(tape, model, last), 0)};
  while (out.size() < max_new) {
    const int token = out.back();
    SequenceState step{ops::embedding_lookup(tape, model.params.embed, std::span(&token, 1)),
                       0, 1};
    step = decoder_stack(tape, model, step, kv, opts, &caches, position);
    ++position;
    out.push_back(argmax_row(lm_logits(tape, model, step.x), 0));
  }
  return out;
}

}  // namespace crosslmm
