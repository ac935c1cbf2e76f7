#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "crosslmm/config.hpp"
#include "crosslmm/error.hpp"
#include "crosslmm/layers.hpp"
#include "crosslmm/ops.hpp"
#include "crosslmm/tensor.hpp"

namespace crosslmm {

/// T RGB frames stored as a [T×3×H×W] tensor with pixel values in [0, 1].
class VideoFrames {
 public:
  explicit VideoFrames(Tensor frames) : frames_(std::move(frames)) {
    if (!frames_.defined() || frames_.rank() != 4 || frames_.shape()[1] != 3)
      throw DimensionError("video frames must be [T x 3 x H x W], got " +
                           (frames_.defined() ? shape_str(frames_.shape())
                                              : std::string("undefined")));
    for (double v : frames_.data())
      if (!(v >= 0.0 && v <= 1.0))
        throw ContractError("pixel values must lie in [0, 1]");
  }

  const Tensor& tensor() const { return frames_; }
  std::size_t frames() const { return frames_.shape()[0]; }
  std::size_t height() const { return frames_.shape()[2]; }
  std::size_t width() const { return frames_.shape()[3]; }
  double pixel(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return frames_[((t * 3 + c) * height() + y) * width() + x];
  }

 private:
  Tensor frames_;
};

/// Flattens every ps×ps patch into a row. Rows are frame-major then raster
/// over the patch grid; columns are channel-major then row then column.
inline Tensor patchify(const VideoFrames& video, std::size_t patch_size) {
  const std::size_t H = video.height(), W = video.width(), ps = patch_size;
  if (ps == 0 || H % ps != 0 || W % ps != 0)
    throw ConfigError("frame size " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not a multiple of patch_size " + std::to_string(ps));
  const std::size_t gy = H / ps, gx = W / ps, T = video.frames();
  const std::size_t width = 3 * ps * ps;
  std::vector<double> rows;
  rows.reserve(T * gy * gx * width);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t py = 0; py < gy; ++py)
      for (std::size_t px = 0; px < gx; ++px)
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t dy = 0; dy < ps; ++dy)
            for (std::size_t dx = 0; dx < ps; ++dx)
              rows.push_back(video.pixel(t, c, py * ps + dy, px * ps + dx));
  return Tensor::matrix(T * gy * gx, width, std::move(rows));
}

/// Toy frame encoder: linear patch embedding plus additive position
/// embedding, applied to each frame independently. Output is [T·N × D].
inline Tensor encode_frames(Tape& tape, const VideoFrames& video,
                            const Tensor& patch_embed, const Tensor& pos_embed,
                            std::size_t patch_size) {
  const std::size_t H = video.height(), W = video.width();
  if (H != W)
    throw ConfigError("frames must be square, got " + std::to_string(H) + "x" +
                      std::to_string(W));
  Tensor patches = patchify(video, patch_size);
  const std::size_t n = (H / patch_size) * (W / patch_size);
  if (pos_embed.rows() != n)
    throw ConfigError("position table has " + std::to_string(pos_embed.rows()) +
                      " rows but frames yield " + std::to_string(n) + " patches");
  return ops::add_tiled(tape, ops::matmul(tape, patches, patch_embed), pos_embed);
}

/// Non-overlapping p×p mean pooling over each frame's G×G token grid.
/// Input rows are frame-major raster order; output keeps that order.
inline Tensor pool_merge(Tape& tape, const Tensor& tokens, std::size_t frames,
                         std::size_t grid, std::size_t pool_window) {
  if (pool_window == 0 || grid % pool_window != 0)
    throw ConfigError("pool_window " + std::to_string(pool_window) +
                      " does not divide grid " + std::to_string(grid));
  if (!tokens.is_matrix() || tokens.rows() != frames * grid * grid)
    throw DimensionError("pool_merge: expected " + std::to_string(frames * grid * grid) +
                         " token rows, got " + shape_str(tokens.shape()));
  const std::size_t d = tokens.cols(), p = pool_window, g = grid / p;
  const double inv = 1.0 / static_cast<double>(p * p);
  std::vector<double> out(frames * g * g * d, 0.0);
  auto src_row = [=](std::size_t t, std::size_t y, std::size_t x) {
    return (t * grid + y) * grid + x;
  };
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t by = 0; by < g; ++by)
      for (std::size_t bx = 0; bx < g; ++bx) {
        double* dst = &out[((t * g + by) * g + bx) * d];
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t r = src_row(t, by * p + dy, bx * p + dx);
            for (std::size_t j = 0; j < d; ++j) dst[j] += tokens[r * d + j];
          }
        for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
      }
  return tape.emit(
      Tensor::matrix(frames * g * g, d, std::move(out)), "pool_merge", {tokens},
      [tokens, frames, grid, p, g, d, inv, src_row](std::span<const double> grad) {
        if (!tokens.requires_grad()) return;
        auto gx = tokens.grad_buffer();
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t by = 0; by < g; ++by)
            for (std::size_t bx = 0; bx < g; ++bx) {
              const double* src = &grad[((t * g + by) * g + bx) * d];
              for (std::size_t dy = 0; dy < p; ++dy)
                for (std::size_t dx = 0; dx < p; ++dx) {
                  const std::size_t r = src_row(t, by * p + dy, bx * p + dx);
                  for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv * src[j];
                }
            }
      });
}

/// Two-layer visual-language projector: LayerNorm(GeLU(x·w1 + b1)·w2 + b2).
struct ProjectorParams {
  Tensor w1, b1, w2, b2, ln_gain, ln_bias;
};

inline Tensor project(Tape& tape, const Tensor& x, const ProjectorParams& p,
                      double eps) {
  if (x.cols() != p.w1.rows())
    throw DimensionError("project: tokens " + shape_str(x.shape()) +
                         " do not match projector input " + shape_str(p.w1.shape()));
  Tensor h = ops::gelu(tape, ops::add_row(tape, ops::matmul(tape, x, p.w1), p.b1));
  Tensor y = ops::add_row(tape, ops::matmul(tape, h, p.w2), p.b2);
  return ops::layer_norm(tape, y, p.ln_gain, p.ln_bias, eps);
}

/// Patch embedding, position table and optional bidirectional blocks.
struct VisionParams {
  Tensor patch_embed;  // [3·ps² × D]
  Tensor pos_embed;    // [N × D]
  std::vector<BlockParams> blocks;
};

/// Full vision tower: encode_frames followed by per-frame transformer blocks.
/// Returns original tokens [T·N × D].
inline Tensor vision_forward(Tape& tape, const VideoFrames& video,
                             const VisionParams& params, const ModelConfig& cfg) {
  if (video.height() != cfg.image_size())
    throw ConfigError("frames are " + std::to_string(video.height()) +
                      " pixels high, config expects " + std::to_string(cfg.image_size()));
  Tensor tokens = encode_frames(tape, video, params.patch_embed, params.pos_embed,
                                cfg.patch_size);
  if (params.blocks.empty()) return tokens;
  const std::size_t n = cfg.tokens_per_frame();
  SelfAttentionOptions opt;
  opt.n_heads = cfg.vision_heads;
  opt.causal = false;
  opt.site = "vision";
  std::vector<Tensor> frames;
  frames.reserve(video.frames());
  for (std::size_t t = 0; t < video.frames(); ++t) {
    Tensor x = ops::slice_rows(tape, tokens, t * n, (t + 1) * n);
    for (const BlockParams& block : params.blocks)
      x = block_forward(tape, x, block, opt, cfg.norm_eps);
    frames.push_back(x);
  }
  return frames.size() == 1 ? frames.front() : ops::concat_rows(tape, frames);
}

}  // namespace crosslmm
