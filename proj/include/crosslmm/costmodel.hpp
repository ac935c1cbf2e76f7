#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crosslmm/config.hpp"
#include "crosslmm/error.hpp"

// Analytic cost of one prefill forward pass. MAC terms mirror every matmul the
// model issues; FLOPs are 2 per MAC. Softmax, norms and activations are not
// counted.

namespace crosslmm {

enum class Variant { baseline, crosslmm };

inline const char* to_string(Variant v) {
  return v == Variant::baseline ? "baseline" : "crosslmm";
}

struct CostConfig {
  ModelConfig model;
  double bytes_per_value = 2.0;
  double device_throughput = 1e15;  // effective FLOP/s for the roofline estimate
  Variant variant = Variant::crosslmm;

  void validate() const {
    model.validate();
    if (!(device_throughput > 0.0)) throw ConfigError("device_throughput must be positive");
    if (!(bytes_per_value > 0.0)) throw ConfigError("bytes_per_value must be positive");
  }

  /// The same LLM fed every original token with no cross-attention.
  CostConfig as_baseline() const {
    CostConfig c = *this;
    c.variant = Variant::baseline;
    return c;
  }
  CostConfig as_crosslmm() const {
    CostConfig c = *this;
    c.variant = Variant::crosslmm;
    return c;
  }

  /// Architecture actually run by this variant. The baseline is the model with
  /// pool_window 1 and no DCAL layers.
  ModelConfig effective_model() const {
    if (variant == Variant::crosslmm) return model;
    ModelConfig m = model;
    m.pool_window = 1;
    m.insert_every = 0;
    return m;
  }
};

/// Multiply-accumulate counts by stage.
struct MacBreakdown {
  std::uint64_t encoder = 0;
  std::uint64_t projector = 0;
  std::uint64_t decoder = 0;  // self-attention and MLP of every layer
  std::uint64_t cross = 0;    // DCAL K/V projections and both branches
  std::uint64_t head = 0;
  std::uint64_t total() const { return encoder + projector + decoder + cross + head; }
};

inline MacBreakdown mac_breakdown(const ModelConfig& m, std::uint64_t T, std::uint64_t Lt) {
  using u = std::uint64_t;
  const u N = m.tokens_per_frame(), M = m.pooled_per_frame();
  const u D = m.vision_dim, Dh = m.projector_hidden, Dp = m.hidden, F = m.ffn;
  MacBreakdown b;

  b.encoder = T * N * m.patch_values() * D;
  b.encoder += T * m.vision_layers * (4 * N * D * D + 2 * N * N * D + 2 * N * D * m.vision_ffn);

  const bool cross = m.has_cross_attention();
  const u projected = T * M + (cross ? T * N : 0);
  b.projector = projected * (D * Dh + Dh * Dp);

  const u Lv = T * M, L = Lv + Lt;
  b.decoder = m.n_layers * (4 * L * Dp * Dp + 2 * L * L * Dp + 2 * L * Dp * F);

  const u keys = T * N;
  const u branch_v2v = m.v2v_enabled ? 2 * Lv * Dp * Dp + 2 * Lv * keys * Dp : 0;
  const u branch_t2v = m.t2v_enabled && Lt > 0 ? 2 * Lt * Dp * Dp + 2 * Lt * keys * Dp : 0;
  b.cross = m.dcal_layer_count() * (2 * keys * Dp * Dp + branch_v2v + branch_t2v);

  b.head = Lt * Dp * m.vocab;
  return b;
}

inline std::uint64_t flops_forward(const CostConfig& cfg, std::uint64_t T, std::uint64_t Lt) {
  return 2 * mac_breakdown(cfg.effective_model(), T, Lt).total();
}

/// LLM sequence length seen by the decoder.
inline std::uint64_t sequence_length(const CostConfig& cfg, std::uint64_t T, std::uint64_t Lt) {
  return T * cfg.effective_model().pooled_per_frame() + Lt;
}

/// Self-attention K/V for every layer plus one projected original-token K/V
/// set per DCAL layer.
inline double kv_memory(const CostConfig& cfg, std::uint64_t T, std::uint64_t Lt) {
  const ModelConfig m = cfg.effective_model();
  const double L = static_cast<double>(sequence_length(cfg, T, Lt));
  const double Dp = static_cast<double>(m.hidden);
  double values = static_cast<double>(m.n_layers) * 2.0 * L * Dp;
  values += static_cast<double>(m.dcal_layer_count()) * 2.0 *
            static_cast<double>(T * m.tokens_per_frame()) * Dp;
  return values * cfg.bytes_per_value;
}

/// Peak transient activations of one decoder layer: residual stream, MLP
/// hidden and attention scores, plus the cross-attention operands if any.
inline double activation_bytes(const CostConfig& cfg, std::uint64_t T, std::uint64_t Lt) {
  const ModelConfig m = cfg.effective_model();
  const double L = static_cast<double>(sequence_length(cfg, T, Lt));
  const double keys = static_cast<double>(T * m.tokens_per_frame());
  double values = L * static_cast<double>(m.hidden) + L * static_cast<double>(m.ffn) +
                  static_cast<double>(m.n_heads) * L * L;
  if (m.has_cross_attention())
    values += keys * static_cast<double>(m.hidden) + static_cast<double>(m.n_heads) * L * keys;
  return values * cfg.bytes_per_value;
}

/// Closed-form parameter count; matches Model::param_count for the same config.
inline std::uint64_t param_count(const ModelConfig& m) {
  using u = std::uint64_t;
  const u D = m.vision_dim, Dh = m.projector_hidden, Dp = m.hidden, F = m.ffn;
  const auto block = [](u d, u f) { return 4 * d * d + 4 * d + 2 * d * f + f + d; };
  u n = m.patch_values() * D + m.tokens_per_frame() * D;
  n += m.vision_layers * block(D, m.vision_ffn);
  n += D * Dh + Dh + Dh * Dp + 3 * Dp;
  n += m.vocab * Dp;
  n += m.n_layers * block(Dp, F);
  const u per_branch = 2 * Dp * Dp + 1;
  n += m.dcal_layer_count() * (2 * Dp + 2 * Dp * Dp + (m.v2v_enabled ? per_branch : 0) +
                               (m.t2v_enabled ? per_branch : 0));
  if (m.has_cross_attention()) n += m.max_frames * Dp + 2 * m.grid * Dp;
  n += 2 * Dp + Dp * m.vocab;
  return n;
}

struct CostReport {
  Variant variant = Variant::crosslmm;
  std::uint64_t frames = 0;
  std::uint64_t text_len = 0;
  std::uint64_t flops = 0;
  double kv_bytes = 0.0;
  double act_bytes = 0.0;
  double param_bytes = 0.0;
  double prefill_s = 0.0;
};

inline CostReport cost_report(const CostConfig& cfg, std::uint64_t T, std::uint64_t Lt) {
  CostReport r;
  r.variant = cfg.variant;
  r.frames = T;
  r.text_len = Lt;
  r.flops = flops_forward(cfg, T, Lt);
  r.kv_bytes = kv_memory(cfg, T, Lt);
  r.act_bytes = activation_bytes(cfg, T, Lt);
  r.param_bytes = static_cast<double>(param_count(cfg.effective_model())) * cfg.bytes_per_value;
  r.prefill_s = static_cast<double>(r.flops) / cfg.device_throughput;
  return r;
}

/// Percentage saved by `ours` relative to `base`.
inline double reduction_pct(double base, double ours) {
  return base == ours ? 0.0 : 100.0 * (1.0 - ours / base);
}

struct SweepRow {
  CostReport baseline, crosslmm;
  double flops_reduction_pct = 0.0;
  double kv_reduction_pct = 0.0;
  double prefill_reduction_pct = 0.0;
};

struct Sweep {
  std::vector<SweepRow> rows;
  double crosslmm_scaling = 0.0;  // FLOPs at the last frame count over the first
  double baseline_scaling = 0.0;
};

inline Sweep sweep(const CostConfig& cfg, const std::vector<std::uint64_t>& frames,
                   std::uint64_t Lt) {
  if (frames.empty()) throw ConfigError("frame list must not be empty");
  cfg.validate();
  Sweep s;
  const CostConfig base = cfg.as_baseline(), ours = cfg.as_crosslmm();
  for (std::uint64_t T : frames) {
    if (T == 0) throw ConfigError("frame counts must be positive");
    SweepRow row{cost_report(base, T, Lt), cost_report(ours, T, Lt)};
    row.flops_reduction_pct = reduction_pct(static_cast<double>(row.baseline.flops),
                                            static_cast<double>(row.crosslmm.flops));
    row.kv_reduction_pct = reduction_pct(row.baseline.kv_bytes, row.crosslmm.kv_bytes);
    row.prefill_reduction_pct = reduction_pct(row.baseline.prefill_s, row.crosslmm.prefill_s);
    s.rows.push_back(row);
  }
  const auto ratio = [&](auto pick) {
    return static_cast<double>(pick(s.rows.back())) / static_cast<double>(pick(s.rows.front()));
  };
  s.crosslmm_scaling = ratio([](const SweepRow& r) { return r.crosslmm.flops; });
  s.baseline_scaling = ratio([](const SweepRow& r) { return r.baseline.flops; });
  return s;
}

}  // namespace crosslmm
