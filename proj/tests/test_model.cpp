#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "crosslmm/checkpoint.hpp"
#include "crosslmm/model.hpp"
#include "support/oracles.hpp"

using namespace crosslmm;

namespace {

ModelConfig toy(std::uint64_t seed = 7) {
  ModelConfig c;
  c.seed = seed;
  return c;
}

VideoFrames video_for(const ModelConfig& c, std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t s = c.image_size();
  return VideoFrames(random_uniform({T, 3, s, s}, 0.0, 1.0, rng));
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

oracle::Mat rows_of(const oracle::Mat& m, std::size_t b, std::size_t e) {
  return {m.begin() + static_cast<long>(b), m.begin() + static_cast<long>(e)};
}

/// Everything a DCAL layer needs, for a fixed model and input.
struct LayerInputs {
  VisualEncoding enc;
  std::vector<std::optional<CrossKv>> kv;
  SequenceState state;
};

LayerInputs layer_inputs(Tape& tape, const Model& m, const VideoFrames& v,
                         const std::vector<int>& text) {
  LayerInputs in;
  in.enc = encode_video(tape, m, v);
  in.kv = dcal_kv(tape, m, in.enc);
  in.state = build_sequence(tape, in.enc.compressed, text, m.params.embed, m.config.max_seq);
  return in;
}

/// Brute-force gated cross-attention for one branch.
oracle::Mat cross_oracle(const oracle::Mat& rows, const oracle::Mat& residual,
                         const Tensor& base, const DcalParams& d,
                         const CrossBranchParams& b, std::size_t heads, GateMode mode) {
  const auto bm = oracle::to_mat(base);
  const auto q = oracle::matmul(rows, oracle::to_mat(b.wq));
  const auto k = oracle::matmul(bm, oracle::to_mat(d.wk));
  const auto v = oracle::matmul(bm, oracle::to_mat(d.wv));
  auto attn = oracle::matmul(oracle::attention(q, k, v, heads, [&](std::size_t) { return bm.size(); }),
                             oracle::to_mat(b.wo));
  const double g = std::clamp(b.gamma_raw.item(), -1.0, 1.0);
  for (std::size_t i = 0; i < attn.size(); ++i)
    for (std::size_t j = 0; j < attn[i].size(); ++j)
      attn[i][j] = mode == GateMode::paper ? attn[i][j] + g * rows[i][j]
                                           : residual[i][j] + g * attn[i][j];
  return attn;
}

std::string gate_name(const ::testing::TestParamInfo<GateMode>& info) {
  return to_string(info.param);
}

}  // namespace

TEST(ConfigTest, ValidationRejectsInconsistentShapes) {
  ModelConfig c = toy();
  c.pool_window = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BuildSequenceTest, SpanArithmetic) {
  Tape tape;
  std::mt19937_64 rng(1);
  Tensor compressed = random_uniform({18, 4}, -1, 1, rng);
  Tensor table = random_uniform({10, 4}, -1, 1, rng);
  const std::vector<int> text = {1, 2, 3, 4, 5};
  SequenceState s = build_sequence(tape, compressed, text, table, 64);
  EXPECT_EQ(s.visual_len, 18u);
  EXPECT_EQ(s.text_len, 5u);
  EXPECT_EQ(s.x.rows(), 23u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s.x.at(18 + 2, j), table.at(3, j));

  SequenceState v = build_sequence(tape, compressed, std::vector<int>{}, table, 64);
  EXPECT_EQ(v.text_len, 0u);
  EXPECT_TRUE(v.x.bitwise_equal(compressed));
  EXPECT_THROW(build_sequence(tape, compressed, text, table, 22), SequenceLengthError);
}

TEST(BuildSequenceTest, ReorderingFramesPermutesVisualBlocksOnly) {
  ModelConfig c = toy();
  Model m = Model::init(c);
  VideoFrames v = video_for(c, 2, 2);
  const std::size_t per = 3 * 64;
  std::vector<double> swapped(v.tensor().data().begin() + per, v.tensor().data().end());
  swapped.insert(swapped.end(), v.tensor().data().begin(), v.tensor().data().begin() + per);
  VideoFrames w(Tensor::from(v.tensor().shape(), swapped));
  const std::vector<int> text = {0, 5, 6};
  Tape tape;
  auto a = layer_inputs(tape, m, v, text).state;
  auto b = layer_inputs(tape, m, w, text).state;
  const std::size_t M = c.pooled_per_frame(), H = c.hidden;
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t j = 0; j < H; ++j) {
      EXPECT_EQ(a.x.at(r, j), b.x.at(M + r, j));
      EXPECT_EQ(a.x.at(M + r, j), b.x.at(r, j));
    }
  for (std::size_t r = 2 * M; r < a.length(); ++r)
    for (std::size_t j = 0; j < H; ++j) EXPECT_EQ(a.x.at(r, j), b.x.at(r, j));
}

namespace {

AttentionWeights random_attention(std::size_t d, std::mt19937_64& rng) {
  return {random_uniform({d, d}, -1, 1, rng), random_uniform({d, d}, -1, 1, rng),
          random_uniform({d, d}, -1, 1, rng), random_uniform({d, d}, -1, 1, rng)};
}

}  // namespace

TEST(SelfAttentionTest, SingleTokenIsValueThenOutputProjection) {
  std::mt19937_64 rng(3);
  AttentionWeights w = random_attention(4, rng);
  Tensor x = random_uniform({1, 4}, -1, 1, rng);
  Tape tape;
  SelfAttentionOptions opt{.n_heads = 2, .rope_base = 10000.0, .position_offset = 5};
  Tensor y = self_attention(tape, x, w, opt);
  const auto ref = oracle::row_times(oracle::row_times(values(x), oracle::to_mat(w.wv)),
                                     oracle::to_mat(w.wo));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y[j], ref[j], 1e-14);
}

TEST(SelfAttentionTest, MatchesBruteForceWithRotaryAndCausalMask) {
  std::mt19937_64 rng(4);
  AttentionWeights w = random_attention(8, rng);
  Tensor x = random_uniform({4, 8}, -1, 1, rng);
  Tape tape;
  Tensor y = self_attention(tape, x, w, {.n_heads = 2, .rope_base = 10000.0});

  const auto xm = oracle::to_mat(x);
  auto q = oracle::matmul(xm, oracle::to_mat(w.wq));
  auto k = oracle::matmul(xm, oracle::to_mat(w.wk));
  const auto v = oracle::matmul(xm, oracle::to_mat(w.wv));
  for (std::size_t i = 0; i < 4; ++i) {
    q[i] = oracle::rope_row(q[i], 2, i, 10000.0);
    k[i] = oracle::rope_row(k[i], 2, i, 10000.0);
  }
  const auto ref = oracle::matmul(
      oracle::attention(q, k, v, 2, [](std::size_t i) { return i + 1; }), oracle::to_mat(w.wo));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(y.at(i, j), ref[i][j], 1e-10);
}

TEST(SelfAttentionTest, RowUnchangedWhenLaterRowsChange) {
  std::mt19937_64 rng(5);
  AttentionWeights w = random_attention(4, rng);
  Tensor x = random_uniform({5, 4}, -1, 1, rng);
  std::vector<double> changed = values(x);
  for (std::size_t j = 8; j < changed.size(); ++j) changed[j] += 0.5;  // rows 2..4
  Tape tape;
  const SelfAttentionOptions opt{.n_heads = 2, .rope_base = 10000.0};
  Tensor a = self_attention(tape, x, w, opt);
  Tensor b = self_attention(tape, Tensor::matrix(5, 4, changed), w, opt);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(a[j], b[j]);
}

TEST(CrossAttentionTest, SingleKeyReturnsProjectedValuePlusGate) {
  std::mt19937_64 rng(6);
  const std::size_t d = 4;
  DcalParams dc{Tensor::filled({d}, 1.0), Tensor::zeros({d}), random_uniform({d, d}, -1, 1, rng),
                random_uniform({d, d}, -1, 1, rng), std::nullopt, std::nullopt};
  dc.v2v = CrossBranchParams{random_uniform({d, d}, -1, 1, rng),
                             random_uniform({d, d}, -1, 1, rng), Tensor::scalar(0.25)};
  ModelConfig c = toy();
  c.hidden = d;
  Tensor base = random_uniform({1, d}, -1, 1, rng);
  Tensor rows = random_uniform({3, d}, -1, 1, rng);
  Tape tape;
  CrossKv kv = cross_kv(tape, base, dc);
  SequenceState s{rows, 3, 0};
  Tensor y = v2v_cross_attention(tape, s, rows, kv, dc, c);
  const auto vo = oracle::row_times(oracle::row_times(values(base), oracle::to_mat(dc.wv)),
                                    oracle::to_mat(dc.v2v->wo));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(y.at(i, j), vo[j] + 0.25 * rows.at(i, j), 1e-14);
}

TEST(CrossAttentionTest, ZeroGatePaperModeIsPureAttention) {
  ModelConfig c = toy();
  c.gamma_init = 0.0;
  Model m = Model::init(c);
  Tape tape;
  auto in = layer_inputs(tape, m, video_for(c, 2, 7), {0, 4});
  const DcalParams& dc = *m.params.dcal[1];
  Tensor y = v2v_cross_attention(tape, in.state, in.state.x, *in.kv[1], dc, c);
  Tensor attn = cross_attend(tape, ops::slice_rows(tape, in.state.x, 0, in.state.visual_len),
                             *in.kv[1], *dc.v2v, c.n_heads, nullptr, "v2v");
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], attn[i]);
}

class CrossOracleTest : public ::testing::TestWithParam<GateMode> {};

TEST_P(CrossOracleTest, BothBranchesMatchBruteForce) {
  // T=2, N=4 (G=2), L_v=2 (p=2), L_t=3
  ModelConfig c = toy(11);
  c.grid = 2;
  c.pool_window = 2;
  c.gate_mode = GetParam();
  c.gamma_init = 0.6;
  Model m = Model::init(c);
  Tape tape;
  auto in = layer_inputs(tape, m, video_for(c, 2, 12), {1, 2, 3});
  ASSERT_EQ(in.enc.cross_base.rows(), 8u);
  ASSERT_EQ(in.state.visual_len, 2u);
  const DcalParams& dc = *m.params.dcal[1];
  std::mt19937_64 rng(13);
  Tensor normed = random_uniform({5, c.hidden}, -1, 1, rng);
  Tensor resid = random_uniform({5, c.hidden}, -1, 1, rng);
  SequenceState s{normed, 2, 3};

  Tensor v = v2v_cross_attention(tape, s, resid, *in.kv[1], dc, c);
  Tensor t = t2v_cross_attention(tape, s, resid, *in.kv[1], dc, c);
  const auto nm = oracle::to_mat(normed), rm = oracle::to_mat(resid);
  const auto vref = cross_oracle(rows_of(nm, 0, 2), rows_of(rm, 0, 2), in.enc.cross_base, dc,
                                 *dc.v2v, c.n_heads, c.gate_mode);
  const auto tref = cross_oracle(rows_of(nm, 2, 5), rows_of(rm, 2, 5), in.enc.cross_base, dc,
                                 *dc.t2v, c.n_heads, c.gate_mode);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(v.at(i, j), vref[i][j], 1e-10);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(t.at(i, j), tref[i][j], 1e-10);
}

INSTANTIATE_TEST_SUITE_P(Gates, CrossOracleTest,
                         ::testing::Values(GateMode::paper, GateMode::residual), gate_name);

TEST(CrossAttentionTest, T2vWithoutTextIsNoOp) {
  ModelConfig c = toy();
  Model m = Model::init(c);
  Tape tape;
  auto in = layer_inputs(tape, m, video_for(c, 1, 14), {});
  EXPECT_FALSE(t2v_cross_attention(tape, in.state, in.state.x, *in.kv[1], *m.params.dcal[1], c)
                   .defined());
  ForwardOptions opts;
  SequenceState out = dcal_forward(tape, in.state, m.params.layers[1], *m.params.dcal[1],
                                   *in.kv[1], c, opts);
  EXPECT_EQ(out.text_len, 0u);
  EXPECT_EQ(out.x.rows(), in.state.visual_len);
}

TEST(CrossAttentionTest, IdenticalTextRowsGiveIdenticalOutputs) {
  ModelConfig c = toy();
  Model m = Model::init(c);
  Tape tape;
  auto in = layer_inputs(tape, m, video_for(c, 1, 15), {3, 3, 3});
  Tensor t = t2v_cross_attention(tape, in.state, in.state.x, *in.kv[1], *m.params.dcal[1], c);
  for (std::size_t j = 0; j < c.hidden; ++j) {
    EXPECT_EQ(t.at(0, j), t.at(1, j));
    EXPECT_EQ(t.at(0, j), t.at(2, j));
  }
}

TEST(CrossAttentionTest, MissingOriginalTokensIsContractError) {
  Tape tape;
  DcalParams dc;
  EXPECT_THROW(cross_kv(tape, Tensor{}, dc), ContractError);
}

TEST(DcalTest, SpansAreIsolatedFromTheOtherBranchParameters) {
  ModelConfig c = toy();
  const Model base = Model::init(c);
  const VideoFrames video = video_for(c, 2, 16);
  const std::vector<int> text = {1, 6, 2};
  auto run = [&](const Model& m) {
    Tape tape;
    auto in = layer_inputs(tape, m, video, text);
    return dcal_forward(tape, in.state, m.params.layers[1], *m.params.dcal[1], *in.kv[1], c,
                        {});
  };
  const SequenceState ref = run(base);
  const std::size_t lv = ref.visual_len, H = c.hidden;

  Model t2v_changed = Model::init(c);
  for (double& v : t2v_changed.params.dcal[1]->t2v->wq.mutable_data()) v *= -1.5;
  t2v_changed.params.dcal[1]->t2v->gamma_raw.mutable_data()[0] = -0.3;
  const SequenceState a = run(t2v_changed);
  for (std::size_t i = 0; i < lv * H; ++i) EXPECT_EQ(a.x[i], ref.x[i]);
  bool text_moved = false;
  for (std::size_t i = lv * H; i < ref.x.numel(); ++i) text_moved |= a.x[i] != ref.x[i];
  EXPECT_TRUE(text_moved);

  Model v2v_changed = Model::init(c);
  for (double& v : v2v_changed.params.dcal[1]->v2v->wo.mutable_data()) v *= 2.0;
  const SequenceState b = run(v2v_changed);
  for (std::size_t i = lv * H; i < ref.x.numel(); ++i) EXPECT_EQ(b.x[i], ref.x[i]);
  bool visual_moved = false;
  for (std::size_t i = 0; i < lv * H; ++i) visual_moved |= b.x[i] != ref.x[i];
  EXPECT_TRUE(visual_moved);
}

namespace {

Tensor logits_of(const ModelConfig& c, const VideoFrames& v, const std::vector<int>& text,
                 const ForwardOptions& opts = {}) {
  Model m = Model::init(c);
  Tape tape;
  return forward(tape, m, v, text, opts);
}

}  // namespace

TEST(IdentityTest, DisabledBranchesEqualPlainModel) {
  ModelConfig plain = toy();
  plain.insert_every = 0;
  ModelConfig off = toy();
  off.v2v_enabled = off.t2v_enabled = false;
  const VideoFrames v = video_for(plain, 2, 17);
  const std::vector<int> text = {0, 3, 5};
  EXPECT_TRUE(logits_of(plain, v, text).bitwise_equal(logits_of(off, v, text)));
  EXPECT_EQ(Model::init(plain).param_count(), Model::init(off).param_count());
}

TEST(IdentityTest, ResidualGateAtZeroEqualsPlainModel) {
  ModelConfig plain = toy();
  plain.insert_every = 0;
  ModelConfig gated = toy();
  gated.gate_mode = GateMode::residual;
  gated.gamma_init = 0.0;
  gated.insert_every = 1;
  const VideoFrames v = video_for(plain, 2, 18);
  const std::vector<int> text = {0, 3, 5, 7};
  Tensor a = logits_of(plain, v, text), b = logits_of(gated, v, text);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(ForwardTest, SequenceLengthIsPooledVisualPlusText) {
  struct Case { std::size_t grid, ps, p, T; };
  for (const Case& k : {Case{4, 2, 2, 2}, Case{4, 2, 1, 1}, Case{27, 1, 9, 2}, Case{27, 1, 27, 3}}) {
    ModelConfig c = toy();
    c.grid = k.grid;
    c.patch_size = k.ps;
    c.pool_window = k.p;
    c.vision_dim = 4;
    c.max_seq = 256;
    const std::vector<int> text = {1, 2, 3, 4};
    std::size_t seen = 0;
    AttentionObserver obs = [&](std::string_view site, const Tensor& p) {
      if (site == "self") seen = p.cols();
    };
    Model m = Model::init(c);
    Tape tape;
    forward(tape, m, video_for(c, k.T, 19), text, {.observer = &obs});
    const std::size_t M = (k.grid / k.p) * (k.grid / k.p);
    EXPECT_EQ(seen, k.T * M + text.size()) << "grid " << k.grid << " p " << k.p;
    if (k.grid == 27) {
      EXPECT_EQ(M, k.p == 9 ? 9u : 1u);
    }
  }
}

TEST(ForwardTest, InsertEveryFourOnEightLayersGivesTwoDcalLayers) {
  ModelConfig c = toy();
  c.n_layers = 8;
  c.insert_every = 4;
  EXPECT_EQ(c.dcal_layer_count(), 2u);
  Model m = Model::init(c);
  std::vector<std::size_t> dcal;
  for (std::size_t i = 0; i < m.params.dcal.size(); ++i)
    if (m.params.dcal[i]) dcal.push_back(i + 1);
  EXPECT_EQ(dcal, (std::vector<std::size_t>{4, 8}));
  std::size_t v2v_calls = 0;
  AttentionObserver obs = [&](std::string_view site, const Tensor&) { v2v_calls += site == "v2v"; };
  Tape tape;
  forward(tape, m, video_for(c, 1, 20), std::vector<int>{1}, {.observer = &obs});
  EXPECT_EQ(v2v_calls, 2 * c.n_heads);
}

TEST(ForwardTest, DeterministicAcrossRuns) {
  ModelConfig c = toy();
  const VideoFrames v = video_for(c, 2, 21);
  EXPECT_TRUE(logits_of(c, v, {1, 2, 3}).bitwise_equal(logits_of(c, v, {1, 2, 3})));
}

TEST(ForwardTest, EveryAttentionRowSumsToOne) {
  ModelConfig c = toy();
  c.vision_layers = 1;
  c.insert_every = 1;
  std::size_t checked = 0;
  AttentionObserver obs = [&](std::string_view, const Tensor& p) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    ++checked;
  };
  logits_of(c, video_for(c, 2, 22), {1, 2, 3}, {.observer = &obs});
  EXPECT_GT(checked, 0u);
}

TEST(ForwardTest, TextLogitsAreCausal) {
  ModelConfig c = toy();
  const VideoFrames v = video_for(c, 2, 23);
  Tensor a = logits_of(c, v, {1, 2, 3, 4});
  Tensor b = logits_of(c, v, {1, 2, 7, 0});
  for (std::size_t i = 0; i < 2 * c.vocab; ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_NE(a.at(2, 0), b.at(2, 0));
}

TEST(ForwardTest, PermutingPatchesInsidePoolBlockKeepsPlainModelLogits) {
  ModelConfig c = toy();
  c.insert_every = 0;
  const VideoFrames v = video_for(c, 1, 24);
  // swap patch (0,0) with patch (1,1); both lie in the first 2x2 pooling block
  std::vector<double> px = values(v.tensor());
  const std::size_t S = c.image_size(), ps = c.patch_size;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t dy = 0; dy < ps; ++dy)
      for (std::size_t dx = 0; dx < ps; ++dx)
        std::swap(px[(ch * S + dy) * S + dx], px[(ch * S + ps + dy) * S + ps + dx]);
  Tensor a = logits_of(c, v, {2, 5});
  Tensor b = logits_of(c, VideoFrames(Tensor::from(v.tensor().shape(), px)), {2, 5});
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(GradientTest, EveryParameterMatchesFiniteDifferences) {
  ModelConfig c = toy(31);
  c.gamma_init = 0.5;
  Model m = Model::init(c);
  const VideoFrames v = video_for(c, 2, 25);
  const std::vector<int> text = {0, 4, 6};
  std::mt19937_64 rng(26);
  Tensor w = random_uniform({c.vocab, 1}, -1, 1, rng);
  auto loss = [&](Tape& t) { return ops::sum(t, ops::matmul(t, forward(t, m, v, text), w)); };
  std::vector<Tensor> all;
  for (const NamedParam& p : m.named_params()) all.push_back(p.tensor);
  EXPECT_LE(oracle::max_grad_error(loss, all, 1e-5, 1e-6), 1e-4);
}

TEST(DecodeTest, SingleStepIsArgmaxOfLastLogitRow) {
  ModelConfig c = toy();
  Model m = Model::init(c);
  const VideoFrames v = video_for(c, 2, 27);
  const std::vector<int> prompt = {0, 3};
  Tape tape;
  Tensor logits = forward(tape, m, v, prompt);
  EXPECT_EQ(greedy_decode(m, v, prompt, 1), std::vector<int>{argmax_row(logits, 1)});
  EXPECT_THROW(greedy_decode(m, v, prompt, 0), ContractError);
  EXPECT_THROW(greedy_decode(m, v, prompt, 60), SequenceLengthError);
}

class DecodeOracleTest : public ::testing::TestWithParam<GateMode> {};

TEST_P(DecodeOracleTest, IncrementalEqualsReForward) {
  ModelConfig c = toy(40);
  c.gate_mode = GetParam();
  c.insert_every = 1;
  Model m = Model::init(c);
  const VideoFrames v = video_for(c, 2, 28);
  std::vector<int> seq = {0, 5};
  const auto fast = greedy_decode(m, v, seq, 6);
  std::vector<int> slow;
  for (int i = 0; i < 6; ++i) {
    Tape tape(TapeOptions{.record = false});
    Tensor logits = forward(tape, m, v, seq);
    slow.push_back(argmax_row(logits, seq.size() - 1));
    seq.push_back(slow.back());
  }
  EXPECT_EQ(fast, slow);
  EXPECT_EQ(fast, greedy_decode(m, v, std::vector<int>{0, 5}, 6));
}

INSTANTIATE_TEST_SUITE_P(Gates, DecodeOracleTest,
                         ::testing::Values(GateMode::paper, GateMode::residual), gate_name);

TEST(CheckpointTest, RoundTripIsBitExact) {
  ModelConfig c = toy();
  Model a = Model::init(c);
  std::stringstream buf;
  write_checkpoint(buf, a.named_params());
  ModelConfig other = c;
  other.seed = 99;
  Model b = Model::init(other);
  load_checkpoint(buf, b);
  const auto pa = a.named_params(), pb = b.named_params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i].tensor.bitwise_equal(pb[i].tensor));
}

TEST(CheckpointTest, RejectsCorruptOrMismatchedFiles) {
  ModelConfig c = toy();
  Model a = Model::init(c);
  std::stringstream buf;
  write_checkpoint(buf, a.named_params());
  const std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(truncated, a), ContractError);
  std::stringstream trailing(bytes + "x");
  EXPECT_THROW(load_checkpoint(trailing, a), ContractError);
  std::stringstream magic("XLMMCKPX" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(magic, a), ContractError);

  ModelConfig bigger = c;
  bigger.n_layers = 3;
  Model b = Model::init(bigger);
  std::stringstream again(bytes);
  EXPECT_THROW(load_checkpoint(again, b), ContractError);
}

TEST(CheckpointTest, LayoutMatchesInitializedModel) {
  ModelConfig c = toy();
  c.vision_layers = 1;
  const Model m = Model::init(c);
  const auto layout = Model::param_layout(c);
  const auto params = m.named_params();
  ASSERT_EQ(layout.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(layout[i].first, params[i].name);
    EXPECT_EQ(layout[i].second, params[i].tensor.shape());
  }
}
