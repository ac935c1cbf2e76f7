#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "crosslmm/checkpoint.hpp"
#include "crosslmm/costmodel.hpp"
#include "crosslmm/gradcheck.hpp"
#include "crosslmm/model.hpp"
#include "crosslmm/training.hpp"

namespace crosslmm {

struct CheckResult {
  std::string module;
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Video of T random frames sized for `cfg`.
inline VideoFrames random_video(const ModelConfig& cfg, std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t s = cfg.image_size();
  return VideoFrames(random_uniform({T, 3, s, s}, 0.0, 1.0, rng));
}

/// MACs counted by the tape during a real forward pass of `cfg`.
inline std::uint64_t measured_macs(const ModelConfig& cfg, std::size_t T, std::size_t Lt) {
  const Model model = Model::init(cfg);
  std::vector<int> text(Lt);
  for (std::size_t i = 0; i < Lt; ++i) text[i] = static_cast<int>(i % cfg.vocab);
  Tape tape(TapeOptions{.record = false});
  forward(tape, model, random_video(cfg, T, cfg.seed + T), text);
  return tape.mac_count();
}

struct MacCase {
  std::string label;
  ModelConfig model;
  std::size_t frames = 1;
  std::size_t text_len = 3;
};

/// Toy grid spanning pool window {1,2}, insertion period {1,2,off} and
/// frame count {1,2,4}.
inline std::vector<MacCase> mac_oracle_cases() {
  const auto make = [](std::size_t p, std::size_t k, std::size_t T, auto tweak) {
    ModelConfig c;
    c.seed = 3;
    c.pool_window = p;
    c.insert_every = k;
    c.max_seq = 128;
    tweak(c);
    std::ostringstream label;
    label << "p=" << p << " K=" << (k == 0 ? std::string("off") : std::to_string(k))
          << " T=" << T;
    return MacCase{label.str(), c, T, 3};
  };
  const auto none = [](ModelConfig&) {};
  return {
      make(2, 2, 2, none),
      make(1, 1, 1, none),
      make(2, 0, 4, none),
      make(1, 2, 4, [](ModelConfig& c) { c.vision_layers = 1; }),
      make(2, 1, 1, [](ModelConfig& c) {
        c.t2v_enabled = false;
        c.n_layers = 3;
      }),
  };
}

namespace detail {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

inline ModelConfig selfcheck_toy() {
  ModelConfig c;
  c.seed = 5;
  return c;
}

inline Tensor toy_logits(const ModelConfig& c, const VideoFrames& v, const std::vector<int>& text) {
  const Model m = Model::init(c);
  Tape tape(TapeOptions{.record = false});
  return forward(tape, m, v, text);
}

inline double fd_error(const std::function<Tensor(Tape&)>& loss_fn, std::vector<Tensor> wrt) {
  Tape tape;
  tape.backward(loss_fn(tape));
  double worst = 0.0;
  for (Tensor& t : wrt) {
    const Tensor g = t.grad_tensor();
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double keep = d[i];
      d[i] = keep + 1e-5;
      Tape a(TapeOptions{.record = false});
      const double up = loss_fn(a).item();
      d[i] = keep - 1e-5;
      Tape b(TapeOptions{.record = false});
      const double down = loss_fn(b).item();
      d[i] = keep;
      const double num = (up - down) / 2e-5;
      worst = std::max(worst, std::abs(g[i] - num) / std::max({std::abs(g[i]), std::abs(num), 1e-8}));
    }
  }
  return worst;
}

}  // namespace detail

/// Every module's invariants at toy scale. Details are deterministic so the
/// report can be compared byte for byte.
inline std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> out;
  const auto check = [&](const char* module, const char* name, auto&& body) {
    CheckResult r{module, name, false, ""};
    try {
      body(r);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("threw: ") + e.what();
    }
    out.push_back(std::move(r));
  };
  using detail::fmt;
  const ModelConfig toy = detail::selfcheck_toy();
  const VideoFrames video = random_video(toy, 2, 11);

  // tensor
  check("tensor", "op_gradients_match_finite_differences", [](CheckResult& r) {
    std::mt19937_64 rng(1);
    Tensor a = random_uniform({3, 4}, -1, 1, rng).set_requires_grad();
    Tensor b = random_uniform({4, 4}, -1, 1, rng).set_requires_grad();
    Tensor g = random_uniform({4}, 0.5, 1.5, rng).set_requires_grad();
    Tensor w = random_uniform({4, 1}, -1, 1, rng);
    const double err = detail::fd_error(
        [&](Tape& t) {
          Tensor h = ops::layer_norm(t, ops::gelu(t, ops::matmul(t, a, b)), g, Tensor::zeros({4}), 1e-5);
          h = ops::softmax_rows(t, ops::rope(t, h, 2, 1, 10000.0), ops::CausalMask{1});
          return ops::sum(t, ops::matmul(t, h, w));
        },
        {a, b, g});
    r.pass = err <= 1e-5;
    r.detail = "max relative error " + fmt(err);
  });
  check("tensor", "mac_counter_matches_formula", [](CheckResult& r) {
    Tape t;
    ops::matmul(t, ops::matmul(t, Tensor::zeros({3, 4}), Tensor::zeros({4, 5})), Tensor::zeros({5, 2}));
    r.pass = t.mac_count() == 3u * 4 * 5 + 3u * 5 * 2;
    r.detail = "counted " + std::to_string(t.mac_count());
  });
  check("tensor", "ops_are_deterministic", [&](CheckResult& r) {
    r.pass = detail::toy_logits(toy, video, {0, 2, 4}).bitwise_equal(
        detail::toy_logits(toy, video, {0, 2, 4}));
  });

  // vision
  check("vision", "pool_exact_on_constants", [](CheckResult& r) {
    Tape t;
    Tensor y = pool_merge(t, Tensor::filled({2 * 16, 3}, 0.3), 2, 4, 2);
    r.pass = std::all_of(y.data().begin(), y.data().end(), [](double v) { return v == 0.3; });
  });
  check("vision", "pool_window_one_is_identity", [](CheckResult& r) {
    std::mt19937_64 rng(2);
    Tape t;
    Tensor x = random_uniform({2 * 9, 4}, -1, 1, rng);
    r.pass = pool_merge(t, x, 2, 3, 1).bitwise_equal(x);
  });
  check("vision", "pool_commutes_with_linear_maps", [](CheckResult& r) {
    std::mt19937_64 rng(3);
    Tape t;
    Tensor x = random_uniform({2 * 16, 4}, -1, 1, rng);
    Tensor w = random_uniform({4, 3}, -1, 1, rng);
    const double d = detail::max_abs_diff(pool_merge(t, ops::matmul(t, x, w), 2, 4, 2),
                                          ops::matmul(t, pool_merge(t, x, 2, 4, 2), w));
    r.pass = d <= 1e-12;
    r.detail = "max difference " + fmt(d);
  });

  // model
  check("model", "attention_rows_sum_to_one", [&](CheckResult& r) {
    ModelConfig c = toy;
    c.vision_layers = 1;
    double worst = 0.0;
    AttentionObserver obs = [&](std::string_view, const Tensor& p) {
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
        worst = std::max(worst, std::abs(s - 1.0));
      }
    };
    const Model m = Model::init(c);
    Tape t(TapeOptions{.record = false});
    forward(t, m, video, std::vector<int>{0, 1, 2}, {.observer = &obs});
    r.pass = worst <= 1e-12;
    r.detail = "max deviation " + fmt(worst);
  });
  check("model", "text_logits_are_causal", [&](CheckResult& r) {
    Tensor a = detail::toy_logits(toy, video, {0, 1, 2, 3});
    Tensor b = detail::toy_logits(toy, video, {0, 1, 6, 7});
    r.pass = true;
    for (std::size_t i = 0; i < 2 * toy.vocab; ++i) r.pass &= a[i] == b[i];
  });
  check("model", "residual_gate_zero_is_identity", [&](CheckResult& r) {
    ModelConfig plain = toy, gated = toy;
    plain.insert_every = 0;
    gated.gate_mode = GateMode::residual;
    gated.gamma_init = 0.0;
    const double d = detail::max_abs_diff(detail::toy_logits(plain, video, {0, 4, 5}),
                                          detail::toy_logits(gated, video, {0, 4, 5}));
    r.pass = d <= 1e-12;
    r.detail = "max difference " + fmt(d);
  });
  check("model", "disabled_branches_equal_plain_model", [&](CheckResult& r) {
    ModelConfig plain = toy, off = toy;
    plain.insert_every = 0;
    off.v2v_enabled = off.t2v_enabled = false;
    r.pass = detail::toy_logits(plain, video, {0, 3}).bitwise_equal(
        detail::toy_logits(off, video, {0, 3}));
  });
  check("model", "cross_attention_spans_are_isolated", [&](CheckResult& r) {
    const Model base = Model::init(toy);
    Model other = Model::init(toy);
    for (double& v : other.params.dcal[1]->t2v->wq.mutable_data()) v = -v;
    auto layer = [&](const Model& m) {
      Tape t(TapeOptions{.record = false});
      VisualEncoding enc = encode_video(t, m, video);
      auto kv = dcal_kv(t, m, enc);
      SequenceState s = build_sequence(t, enc.compressed, std::vector<int>{0, 2, 4},
                                       m.params.embed, toy.max_seq);
      return dcal_forward(t, s, m.params.layers[1], *m.params.dcal[1], *kv[1], toy, {});
    };
    const SequenceState a = layer(base), b = layer(other);
    bool visual_same = true, text_moved = false;
    for (std::size_t i = 0; i < a.x.numel(); ++i) {
      if (i < a.visual_len * toy.hidden) visual_same &= a.x[i] == b.x[i];
      else text_moved |= a.x[i] != b.x[i];
    }
    r.pass = visual_same && text_moved;
  });
  check("model", "incremental_decode_matches_reforward", [&](CheckResult& r) {
    const Model m = Model::init(toy);
    std::vector<int> seq{0, 3};
    const auto fast = greedy_decode(m, video, seq, 5);
    std::vector<int> slow;
    for (int i = 0; i < 5; ++i) {
      Tape t(TapeOptions{.record = false});
      slow.push_back(argmax_row(forward(t, m, video, seq), seq.size() - 1));
      seq.push_back(slow.back());
    }
    r.pass = fast == slow;
  });
  check("model", "checkpoint_round_trip_is_bit_exact", [&](CheckResult& r) {
    const Model a = Model::init(toy);
    ModelConfig c = toy;
    c.seed = toy.seed + 1;
    Model b = Model::init(c);
    std::stringstream buf;
    write_checkpoint(buf, a.named_params());
    load_checkpoint(buf, b);
    const auto pa = a.named_params(), pb = b.named_params();
    r.pass = true;
    for (std::size_t i = 0; i < pa.size(); ++i) r.pass &= pa[i].tensor.bitwise_equal(pb[i].tensor);
  });

  // training
  check("training", "adam_first_step_moves_by_lr", [](CheckResult& r) {
    Tensor p = Tensor::scalar(0.5).set_requires_grad();
    p.grad_buffer()[0] = 1.0;
    OptimState st{.hyper = {.lr = 1e-3}};
    adam_step({{"w", ParamGroup::llm, p}}, st, {});
    r.pass = std::abs((0.5 - p.item()) - 1e-3) <= 1e-10;
    r.detail = "moved " + fmt(0.5 - p.item());
  });
  check("training", "gates_clamped_after_step", [](CheckResult& r) {
    Tensor g = Tensor::scalar(0.9999).set_requires_grad();
    g.grad_buffer()[0] = -1.0;
    OptimState st{.hyper = {.lr = 0.1}};
    adam_step({{"x.gamma_raw", ParamGroup::v2v, g}}, st, {});
    r.pass = g.item() == 1.0;
  });
  check("training", "stage1_freezes_llm_encoder_t2v", [&](CheckResult& r) {
    Model m = Model::init(toy);
    std::vector<Tensor> before;
    for (const NamedParam& p : m.named_params()) before.push_back(p.tensor.clone());
    train(m, {TrainStage::stage1(10)}, make_dataset(1, 4, toy, 2), AdamConfig{.lr = 1e-2});
    const auto after = m.named_params();
    bool frozen_same = true, projector_moved = false, v2v_moved = false;
    for (std::size_t i = 0; i < after.size(); ++i) {
      const bool same = after[i].tensor.bitwise_equal(before[i]);
      const ParamGroup g = after[i].group;
      if (g == ParamGroup::projector) projector_moved |= !same;
      else if (g == ParamGroup::v2v) v2v_moved |= !same;
      else frozen_same &= same;
    }
    r.pass = frozen_same && projector_moved && v2v_moved;
  });
  check("training", "dataset_is_deterministic", [&](CheckResult& r) {
    const auto a = make_dataset(9, 5, toy, 2), b = make_dataset(9, 5, toy, 2);
    r.pass = true;
    for (std::size_t i = 0; i < a.size(); ++i)
      r.pass &= a[i].caption == b[i].caption && a[i].video.tensor().bitwise_equal(b[i].video.tensor());
  });

  // costmodel
  check("costmodel", "analytic_flops_equal_mac_counter", [](CheckResult& r) {
    r.pass = true;
    for (const MacCase& c : mac_oracle_cases()) {
      CostConfig cc{c.model, 8.0, 1e9, Variant::crosslmm};
      const std::uint64_t analytic = flops_forward(cc, c.frames, c.text_len);
      const std::uint64_t counted = 2 * measured_macs(c.model, c.frames, c.text_len);
      if (analytic != counted) {
        r.pass = false;
        r.detail += c.label + ": " + std::to_string(analytic) + " vs " + std::to_string(counted) + "; ";
      }
    }
    if (r.pass) r.detail = std::to_string(mac_oracle_cases().size()) + " configs equal";
  });
  check("costmodel", "no_compression_means_no_reduction", [](CheckResult& r) {
    CostConfig c;
    c.model.pool_window = 1;
    c.model.insert_every = 0;
    const Sweep s = sweep(c, {1, 2, 4}, 3);
    r.pass = true;
    for (const SweepRow& row : s.rows)
      r.pass &= row.flops_reduction_pct == 0.0 && row.kv_reduction_pct == 0.0 &&
                row.baseline.flops == row.crosslmm.flops;
  });
  check("costmodel", "larger_pool_window_never_costs_more", [](CheckResult& r) {
    CostConfig c;
    c.model.grid = 12;
    std::uint64_t prev = UINT64_MAX;
    r.pass = true;
    for (std::size_t p : {1, 2, 3, 4, 6, 12}) {
      c.model.pool_window = p;
      const std::uint64_t f = flops_forward(c, 4, 3);
      r.pass &= f <= prev;
      prev = f;
    }
  });
  check("costmodel", "prefill_linear_in_inverse_throughput", [](CheckResult& r) {
    CostConfig a, b;
    b.device_throughput = a.device_throughput * 4;
    r.pass = cost_report(a, 2, 3).prefill_s == 4 * cost_report(b, 2, 3).prefill_s;
  });
  check("costmodel", "param_count_matches_model", [&](CheckResult& r) {
    r.pass = true;
    for (const MacCase& c : mac_oracle_cases())
      r.pass &= param_count(c.model) == Model::init(c.model).param_count();
  });

  // gradcheck
  check("gradcheck", "toy_groups_within_tolerance", [&](CheckResult& r) {
    ModelConfig c = toy;
    c.gamma_init = 0.5;
    GradcheckOptions opt;
    opt.seed = toy.seed;
    const GradcheckReport rep = gradcheck(Model::init(c), opt);
    r.pass = rep.pass() && rep.groups.size() == 6;
    double worst = 0.0;
    for (const GroupCheck& g : rep.groups) worst = std::max(worst, g.max_rel_error);
    r.detail = std::to_string(rep.groups.size()) + " groups, worst " + fmt(worst);
  });
  return out;
}

}  // namespace crosslmm
