#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "crosslmm/error.hpp"

namespace crosslmm {

/// How a cross-attention branch combines its attention output with its input.
enum class GateMode {
  paper,     // out = Attn(Q,K,V) + γ·I′   (gate on the residual path)
  residual,  // out = h + γ·Attn(Q,K,V)    (identity when γ = 0)
};

inline const char* to_string(GateMode m) {
  return m == GateMode::paper ? "paper" : "residual";
}

inline GateMode gate_mode_from_string(const std::string& s) {
  if (s == "paper") return GateMode::paper;
  if (s == "residual") return GateMode::residual;
  throw ConfigError("gate_mode must be \"paper\" or \"residual\", got \"" + s + "\"");
}

/// Every architectural hyperparameter of the vision encoder stand-in,
/// projector and decoder.
struct ModelConfig {
  // Vision stand-in. Frames are (grid·patch_size)² pixels; each frame yields
  // grid² original tokens and (grid/pool_window)² compressed tokens.
  std::size_t grid = 4;
  std::size_t patch_size = 2;
  std::size_t pool_window = 2;
  std::size_t vision_dim = 8;
  std::size_t vision_layers = 0;  // bidirectional blocks after patch embedding
  std::size_t vision_heads = 2;
  std::size_t vision_ffn = 16;
  std::size_t max_frames = 8;     // rows of the temporal embedding table

  std::size_t projector_hidden = 16;

  // Decoder.
  std::size_t hidden = 16;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t ffn = 32;
  std::size_t insert_every = 2;  // DCAL period; 0 disables cross-attention
  std::size_t vocab = 8;
  std::size_t max_seq = 64;
  GateMode gate_mode = GateMode::paper;
  bool v2v_enabled = true;
  bool t2v_enabled = true;
  double gamma_init = 1.0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;

  std::uint64_t seed = 0;

  std::size_t tokens_per_frame() const { return grid * grid; }
  std::size_t pooled_grid() const { return grid / pool_window; }
  std::size_t pooled_per_frame() const { return pooled_grid() * pooled_grid(); }
  std::size_t image_size() const { return grid * patch_size; }
  std::size_t patch_values() const { return 3 * patch_size * patch_size; }
  std::size_t head_dim() const { return hidden / n_heads; }

  /// Layers are numbered from 1; layers insert_every, 2·insert_every, ... carry
  /// cross-attention when at least one branch is enabled.
  bool is_dcal_layer(std::size_t layer) const {
    return insert_every > 0 && (v2v_enabled || t2v_enabled) &&
           layer % insert_every == 0;
  }
  std::size_t dcal_layer_count() const {
    if (insert_every == 0 || !(v2v_enabled || t2v_enabled)) return 0;
    return n_layers / insert_every;
  }
  bool has_cross_attention() const { return dcal_layer_count() > 0; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(grid, "grid");
    positive(patch_size, "patch_size");
    positive(pool_window, "pool_window");
    positive(vision_dim, "vision_dim");
    positive(max_frames, "max_frames");
    positive(projector_hidden, "projector_hidden");
    positive(hidden, "hidden");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(ffn, "ffn");
    positive(vocab, "vocab");
    positive(max_seq, "max_seq");
    if (grid % pool_window != 0)
      throw ConfigError("pool_window " + std::to_string(pool_window) +
                        " does not divide grid " + std::to_string(grid));
    if (hidden % n_heads != 0)
      throw ConfigError("hidden " + std::to_string(hidden) +
                        " is not divisible by n_heads " + std::to_string(n_heads));
    if (head_dim() % 2 != 0)
      throw ConfigError("head dimension must be even for rotary encoding");
    if (vision_layers > 0) {
      positive(vision_heads, "vision_heads");
      positive(vision_ffn, "vision_ffn");
      if (vision_dim % vision_heads != 0)
        throw ConfigError("vision_dim is not divisible by vision_heads");
    }
    if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
    if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
  }
};

}  // namespace crosslmm
