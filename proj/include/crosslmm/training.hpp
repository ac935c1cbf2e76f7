#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "crosslmm/error.hpp"
#include "crosslmm/model.hpp"
#include "crosslmm/ops.hpp"
#include "crosslmm/tensor.hpp"
#include "crosslmm/vision.hpp"

namespace crosslmm {

// Toy caption vocabulary.
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kDark = 2;
inline constexpr int kBright = 3;
inline constexpr int kQuadrant0 = 4;  // 4..7: brightest quadrant TL, TR, BL, BR
inline constexpr std::size_t kCaptionVocab = 8;

struct SynthSample {
  VideoFrames video;
  std::vector<int> caption;  // BOS, one token per frame, EOS

  std::span<const int> inputs() const { return {caption.data(), caption.size() - 1}; }
  std::span<const int> targets() const { return {caption.data() + 1, caption.size() - 1}; }
};

/// Caption token of frame t, read off the pixels alone.
inline int frame_token(const VideoFrames& video, std::size_t t) {
  const std::size_t H = video.height(), W = video.width();
  double total = 0.0;
  std::array<double, 4> quad{};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double v = video.pixel(t, c, y, x);
        total += v;
        quad[(y >= H / 2 ? 2 : 0) + (x >= W / 2 ? 1 : 0)] += v;
      }
  const double mean = total / static_cast<double>(3 * H * W);
  if (mean < 0.25) return kDark;
  if (mean > 0.75) return kBright;
  return kQuadrant0 + static_cast<int>(std::max_element(quad.begin(), quad.end()) - quad.begin());
}

inline std::vector<int> caption_for(const VideoFrames& video) {
  std::vector<int> c{kBos};
  for (std::size_t t = 0; t < video.frames(); ++t) c.push_back(frame_token(video, t));
  c.push_back(kEos);
  return c;
}

/// Procedural frame: dark, bright, or mid-grey with one lit quadrant.
inline void paint_frame(std::vector<double>& px, std::size_t t, std::size_t side,
                        std::mt19937_64& rng) {
  const std::uint64_t kind = rng() % 6;
  const std::size_t plane = side * side;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        double v;
        if (kind == 0) {
          v = uniform(rng, 0.0, 0.2);
        } else if (kind == 1) {
          v = uniform(rng, 0.8, 1.0);
        } else {
          const std::size_t q = (y >= side / 2 ? 2 : 0) + (x >= side / 2 ? 1 : 0);
          v = q == kind - 2 ? uniform(rng, 0.55, 0.7) : uniform(rng, 0.3, 0.45);
        }
        px[(t * 3 + c) * plane + y * side + x] = v;
      }
}

/// Deterministic synthetic video-caption pairs. Sample i depends only on
/// (seed, i).
inline std::vector<SynthSample> make_dataset(std::uint64_t seed, std::size_t count,
                                             const ModelConfig& cfg, std::size_t frames) {
  if (count == 0) throw ContractError("dataset count must be at least 1");
  if (frames == 0) throw ContractError("samples need at least one frame");
  if (cfg.vocab < kCaptionVocab)
    throw ConfigError("vocab must be at least " + std::to_string(kCaptionVocab) +
                      " for the synthetic captions");
  const std::size_t side = cfg.image_size();
  if (side < 2 || side % 2 != 0)
    throw ConfigError("synthetic frames need an even image size, got " + std::to_string(side));
  std::vector<SynthSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::vector<double> px(frames * 3 * side * side);
    for (std::size_t t = 0; t < frames; ++t) paint_frame(px, t, side, rng);
    VideoFrames video(Tensor::from({frames, 3, side, side}, std::move(px)));
    std::vector<int> caption = caption_for(video);
    out.push_back({std::move(video), std::move(caption)});
  }
  return out;
}

/// Same captions, every frame replaced by uniform grey.
inline std::vector<SynthSample> constant_frame_copy(const std::vector<SynthSample>& data) {
  std::vector<SynthSample> out;
  out.reserve(data.size());
  for (const SynthSample& s : data)
    out.push_back({VideoFrames(Tensor::filled(s.video.tensor().shape(), 0.5)), s.caption});
  return out;
}

/// Cross-entropy of the best video-blind predictor: at each caption position,
/// the empirical label distribution.
inline double blind_floor(const std::vector<SynthSample>& data) {
  std::map<std::size_t, std::map<int, std::size_t>> counts;
  for (const SynthSample& s : data) {
    const auto tg = s.targets();
    for (std::size_t i = 0; i < tg.size(); ++i) ++counts[i][tg[i]];
  }
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& [pos, hist] : counts) {
    std::size_t m = 0;
    for (const auto& [label, c] : hist) m += c;
    for (const auto& [label, c] : hist)
      total -= static_cast<double>(c) * std::log(static_cast<double>(c) / m);
    n += m;
  }
  return total / static_cast<double>(n);
}

/// Mean negative log-softmax of the target ids, one target per row.
inline Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets) {
  if (!logits.is_matrix() || logits.rows() != targets.size())
    throw DimensionError("cross_entropy: " + shape_str(logits.shape()) + " logits for " +
                         std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.rows(), V = logits.cols();
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= V)
      throw ContractError("target id " + std::to_string(t) + " outside vocab of " +
                          std::to_string(V));
  std::vector<double> probs(n * V);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < V; ++j) probs[i * V + j] = std::exp(row[j] - mx) / z;
    loss -= row[targets[i]] - mx - std::log(z);
  }
  const std::vector<int> tg(targets.begin(), targets.end());
  return tape.emit(Tensor::scalar(loss / static_cast<double>(n)), "cross_entropy", {logits},
                   [logits, probs = std::move(probs), tg, n, V](std::span<const double> g) {
                     if (!logits.requires_grad()) return;
                     auto gx = logits.grad_buffer();
                     const double s = g[0] / static_cast<double>(n);
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t j = 0; j < V; ++j)
                         gx[i * V + j] += s * (probs[i * V + j] - (static_cast<int>(j) == tg[i]));
                   });
}

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// Adam moments, one pair per parameter in canonical order. Each parameter
/// counts its own updates so a group unfrozen late starts with fresh bias
/// correction.
struct OptimState {
  AdamConfig hyper;
  std::size_t step = 0;
  std::vector<std::vector<double>> m{}, v{};
  std::vector<std::size_t> updates{};
};

inline bool is_gamma(const std::string& name) {
  return name.ends_with(".gamma_raw");
}

/// One AdamW update. Parameters in `freeze` are left bitwise untouched;
/// every gate is clamped to [-1, 1] afterwards.
inline void adam_step(const std::vector<NamedParam>& params, OptimState& st,
                      const std::set<ParamGroup>& freeze) {
  if (st.m.empty()) {
    for (const NamedParam& p : params) {
      st.m.emplace_back(p.tensor.numel(), 0.0);
      st.v.emplace_back(p.tensor.numel(), 0.0);
    }
    st.updates.assign(params.size(), 0);
  }
  if (st.m.size() != params.size())
    throw ContractError("optimizer state tracks " + std::to_string(st.m.size()) +
                        " tensors, got " + std::to_string(params.size()));
  ++st.step;
  const AdamConfig& h = st.hyper;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const NamedParam& p = params[i];
    if (freeze.contains(p.group) || !p.tensor.has_grad()) continue;
    if (st.m[i].size() != p.tensor.numel())
      throw ContractError("optimizer moments do not match " + p.name);
    const std::size_t t = ++st.updates[i];
    const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    Tensor handle = p.tensor;  // shares storage
    auto w = handle.mutable_data();
    const auto g = p.tensor.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + h.eps);
      if (h.weight_decay != 0.0) w[j] -= h.lr * h.weight_decay * w[j];
      w[j] -= h.lr * update;
    }
    if (is_gamma(p.name))
      for (double& x : w) x = std::clamp(x, -1.0, 1.0);
  }
}

enum class StageId { stage1, stage2 };

inline const char* to_string(StageId s) { return s == StageId::stage1 ? "stage1" : "stage2"; }

struct TrainStage {
  StageId id = StageId::stage1;
  std::set<ParamGroup> trainable;
  bool t2v_active = false;
  std::size_t steps = 0;

  /// Alignment: projector and V2V learn, T2V is switched off.
  static TrainStage stage1(std::size_t steps) {
    return {StageId::stage1, {ParamGroup::projector, ParamGroup::v2v}, false, steps};
  }
  /// Instruction tuning: everything learns with both branches on.
  static TrainStage stage2(std::size_t steps) {
    return {StageId::stage2, {std::begin(kAllGroups), std::end(kAllGroups)}, true, steps};
  }

  std::set<ParamGroup> frozen() const {
    std::set<ParamGroup> out;
    for (ParamGroup g : kAllGroups)
      if (!trainable.contains(g)) out.insert(g);
    return out;
  }
};

struct StepRecord {
  std::size_t step = 0;  // 1-based across all stages
  StageId stage = StageId::stage1;
  double loss = 0.0;
  std::map<std::string, double> gamma_values;  // effective (clamped) gates
};

struct StageSummary {
  StageId stage = StageId::stage1;
  std::size_t steps = 0;
  double loss_before = 0.0;  // mean loss over the dataset, before the stage
  double loss_after = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<StageSummary> stages;
};

inline std::map<std::string, double> gamma_values(const Model& model) {
  std::map<std::string, double> out;
  for (const NamedParam& p : model.named_params())
    if (is_gamma(p.name)) out[p.name] = std::clamp(p.tensor.item(), -1.0, 1.0);
  return out;
}

inline double sample_loss(const Model& model, const SynthSample& s, bool t2v_active) {
  Tape tape(TapeOptions{.record = false});
  return cross_entropy(tape, forward(tape, model, s.video, s.inputs(), {.t2v_active = t2v_active}),
                       s.targets())
      .item();
}

inline double dataset_loss(const Model& model, const std::vector<SynthSample>& data,
                           bool t2v_active) {
  double total = 0.0;
  for (const SynthSample& s : data) total += sample_loss(model, s, t2v_active);
  return total / static_cast<double>(data.size());
}

/// Runs the stages in order with batch size one, cycling through `data`.
/// `on_step` sees every record as it is produced.
inline TrainResult train(Model& model, const std::vector<TrainStage>& stages,
                         const std::vector<SynthSample>& data, const AdamConfig& adam,
                         const std::function<void(const StepRecord&)>& on_step = {}) {
  if (data.empty()) throw ContractError("training needs a non-empty dataset");
  TrainResult result;
  OptimState opt{.hyper = adam};
  std::vector<NamedParam> params = model.named_params();
  std::size_t global = 0, cursor = 0;
  for (const TrainStage& stage : stages) {
    const std::set<ParamGroup> frozen = stage.frozen();
    for (NamedParam& p : params) p.tensor.set_requires_grad(!frozen.contains(p.group));
    StageSummary summary{stage.id, stage.steps, dataset_loss(model, data, stage.t2v_active), 0.0};
    for (std::size_t s = 0; s < stage.steps; ++s) {
      const SynthSample& sample = data[cursor];
      cursor = (cursor + 1) % data.size();
      Tape tape;
      Tensor logits =
          forward(tape, model, sample.video, sample.inputs(), {.t2v_active = stage.t2v_active});
      Tensor loss = cross_entropy(tape, logits, sample.targets());
      ++global;
      if (!std::isfinite(loss.item()))
        throw TrainingDiverged("loss is " + std::to_string(loss.item()) + " at step " +
                               std::to_string(global) + " (" + to_string(stage.id) + ")");
      for (const NamedParam& p : params) p.tensor.zero_grad();
      tape.backward(loss);
      adam_step(params, opt, frozen);
      StepRecord rec{global, stage.id, loss.item(), gamma_values(model)};
      if (on_step) on_step(rec);
      result.steps.push_back(std::move(rec));
    }
    summary.loss_after = dataset_loss(model, data, stage.t2v_active);
    result.stages.push_back(summary);
  }
  for (NamedParam& p : params) p.tensor.set_requires_grad(true);
  return result;
}

}  // namespace crosslmm
