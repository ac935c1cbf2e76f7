#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "crosslmm/error.hpp"
#include "crosslmm/model.hpp"
#include "crosslmm/training.hpp"

namespace crosslmm {

struct GradcheckOptions {
  std::size_t coords_per_group = 32;
  double threshold = 1e-4;
  double step = 1e-5;
  double floor = 1e-6;  // |analytic − numeric| / max(|analytic|, |numeric|, floor)
  std::size_t max_params = 1'000'000;
  std::size_t frames = 2;  // L_t = frames + 1 with synthetic captions
  std::uint64_t seed = 0;
  Tape::LeafGradHook leaf_hook;  // test seam: may rewrite analytic gradients
};

struct GroupCheck {
  std::string group;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  std::string worst_param{};
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GroupCheck> groups;
  bool pass() const {
    return std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.pass; });
  }
};

/// Gate scalars are reported apart from the branch they belong to.
inline std::string gradcheck_group(const NamedParam& p) {
  return is_gamma(p.name) ? "gamma" : to_string(p.group);
}

/// Central differences against the tape gradient of the caption loss on one
/// synthetic sample, over a seeded sample of coordinates from each group.
inline GradcheckReport gradcheck(const Model& model, const GradcheckOptions& opt) {
  const std::size_t n = model.param_count();
  if (n > opt.max_params)
    throw ConfigError("gradcheck refuses " + std::to_string(n) + " parameters (limit " +
                      std::to_string(opt.max_params) +
                      "); use a toy-scale config such as the `toy` preset");
  const SynthSample sample = make_dataset(opt.seed, 1, model.config, opt.frames).front();
  auto loss_of = [&](Tape& tape) {
    return cross_entropy(tape, forward(tape, model, sample.video, sample.inputs()),
                         sample.targets());
  };

  std::vector<NamedParam> params = model.named_params();
  for (NamedParam& p : params) p.tensor.set_requires_grad(true);
  {
    Tape tape;
    if (opt.leaf_hook) tape.set_leaf_grad_hook(opt.leaf_hook);
    tape.backward(loss_of(tape));
  }

  struct Coord {
    std::size_t param, index;
  };
  std::map<std::string, std::vector<Coord>> pool;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].tensor.numel(); ++j)
      pool[gradcheck_group(params[i])].push_back({i, j});

  std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ull);
  GradcheckReport report;
  for (auto& [group, coords] : pool) {
    // partial Fisher-Yates with raw draws keeps the sample platform-independent
    const std::size_t k = std::min(opt.coords_per_group, coords.size());
    for (std::size_t i = 0; i < k; ++i)
      std::swap(coords[i], coords[i + rng() % (coords.size() - i)]);
    GroupCheck gc{group, k};
    for (std::size_t i = 0; i < k; ++i) {
      Tensor t = params[coords[i].param].tensor;
      const std::size_t j = coords[i].index;
      const double analytic = t.has_grad() ? t.grad()[j] : 0.0;
      auto data = t.mutable_data();
      const double keep = data[j];
      data[j] = keep + opt.step;
      Tape up(TapeOptions{.record = false});
      const double f_up = loss_of(up).item();
      data[j] = keep - opt.step;
      Tape down(TapeOptions{.record = false});
      const double f_down = loss_of(down).item();
      data[j] = keep;
      const double numeric = (f_up - f_down) / (2 * opt.step);
      const double err = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      if (err > gc.max_rel_error || gc.worst_param.empty()) {
        gc.max_rel_error = std::max(gc.max_rel_error, err);
        gc.worst_param = params[coords[i].param].name;
      }
    }
    gc.pass = gc.max_rel_error <= opt.threshold;
    report.groups.push_back(gc);
  }
  return report;
}

}  // namespace crosslmm
