#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crosslmm/checkpoint.hpp"
#include "crosslmm/costmodel.hpp"
#include "crosslmm/gradcheck.hpp"
#include "crosslmm/run_config.hpp"
#include "crosslmm/selfcheck.hpp"
#include "crosslmm/training.hpp"

namespace crosslmm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;

/// Appends newline-delimited JSON records to one report file.
class ReportFile {
 public:
  ReportFile(const std::filesystem::path& dir, const std::string& name) : path_(dir / name) {
    std::filesystem::create_directories(dir);
    os_.open(path_, std::ios::app);
    if (!os_) throw Error("cannot open report " + path_.string());
  }
  void write(const json& record) {
    os_ << record.dump() << '\n';
    if (!os_) throw Error("failed writing " + path_.string());
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "crosslmm-out";
  std::vector<std::uint64_t> frames;
};

inline RunConfig configure(const Options& o) {
  RunConfig rc = load_config(o.config);
  if (o.seed) {
    rc.seed = *o.seed;
    rc.model.seed = *o.seed;
    rc.gradcheck.options.seed = *o.seed;
  }
  return rc;
}

inline json gamma_json(const std::map<std::string, double>& g) {
  json j = json::object();
  for (const auto& [name, v] : g) j[name] = v;
  return j;
}

/// Checked on the closed-form count so oversized models are never allocated.
inline void require_toy_scale(const ModelConfig& m, std::size_t limit, const char* command) {
  const std::uint64_t n = param_count(m);
  if (n > limit)
    throw ConfigError(std::string(command) + " runs at toy scale only: the model has " +
                      std::to_string(n) + " parameters (limit " +
                      std::to_string(limit) + "); use the toy or toy-overfit preset");
}

inline int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig rc = configure(o);
  require_toy_scale(rc.model, rc.gradcheck.options.max_params, "train");
  Model model = Model::init(rc.model);
  const auto data = make_dataset(rc.seed, rc.train.samples, rc.model, rc.train.frames);
  ReportFile metrics(o.out, "metrics.jsonl");
  ReportFile summary(o.out, "train_summary.jsonl");
  TrainResult result;
  try {
    result = train(model, rc.stages(), data, rc.train.adam, [&](const StepRecord& r) {
      metrics.write({{"step", r.step},
                     {"stage", to_string(r.stage)},
                     {"loss", r.loss},
                     {"gamma_values", gamma_json(r.gamma_values)}});
    });
  } catch (const TrainingDiverged& e) {
    out << "training diverged: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  for (const StageSummary& s : result.stages) {
    summary.write({{"record", "stage"},
                   {"stage", to_string(s.stage)},
                   {"steps", s.steps},
                   {"loss_before", s.loss_before},
                   {"loss_after", s.loss_after}});
    out << to_string(s.stage) << ": " << s.steps << " steps, dataset loss " << std::fixed
        << std::setprecision(4) << s.loss_before << " -> " << s.loss_after << '\n';
  }
  const std::filesystem::path ckpt = std::filesystem::path(o.out) / "checkpoint.bin";
  save_checkpoint(ckpt, model);
  out << "metrics: " << metrics.path().string() << "\ncheckpoint: " << ckpt.string() << '\n';
  return kExitOk;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
  const RunConfig rc = configure(o);
  ModelConfig mc = rc.model;
  if (rc.gradcheck.gamma_init) mc.gamma_init = *rc.gradcheck.gamma_init;
  require_toy_scale(mc, rc.gradcheck.options.max_params, "gradcheck");
  const Model model = Model::init(mc);
  const GradcheckReport rep = gradcheck(model, rc.gradcheck.options);
  ReportFile file(o.out, "gradcheck.jsonl");
  for (const GroupCheck& g : rep.groups) {
    file.write({{"group", g.group},
                {"coords", g.coords},
                {"max_rel_error", g.max_rel_error},
                {"worst_param", g.worst_param},
                {"threshold", rc.gradcheck.options.threshold},
                {"pass", g.pass}});
    out << std::left << std::setw(10) << g.group << std::right << std::setw(4) << g.coords
        << " coords  max rel err " << std::scientific << std::setprecision(3)
        << g.max_rel_error << "  " << (g.pass ? "PASS" : "FAIL") << '\n';
  }
  out << "gradcheck " << (rep.pass() ? "passed" : "FAILED") << '\n';
  return rep.pass() ? kExitOk : kExitCheckFailed;
}

inline json cost_json(const CostReport& r) {
  return {{"record", "cost"},          {"variant", to_string(r.variant)},
          {"frames", r.frames},        {"text_len", r.text_len},
          {"flops", r.flops},          {"kv_bytes", r.kv_bytes},
          {"act_bytes", r.act_bytes},  {"param_bytes", r.param_bytes},
          {"prefill_s", r.prefill_s}};
}

inline int cmd_costmodel(const Options& o, std::ostream& out) {
  const RunConfig rc = configure(o);
  const std::vector<std::uint64_t> frames = o.frames.empty() ? rc.cost.frames : o.frames;
  const Sweep s = sweep(rc.cost_config(), frames, rc.cost.text_len);
  ReportFile file(o.out, "costmodel.jsonl");
  out << "preset " << rc.preset << ", L_t = " << rc.cost.text_len << '\n'
      << "frames  baseline TFLOPs  crosslmm TFLOPs  FLOPs red.  KV red.\n";
  for (const SweepRow& row : s.rows) {
    file.write(cost_json(row.baseline));
    file.write(cost_json(row.crosslmm));
    file.write({{"record", "reduction"},
                {"frames", row.crosslmm.frames},
                {"flops_pct", row.flops_reduction_pct},
                {"kv_pct", row.kv_reduction_pct},
                {"prefill_pct", row.prefill_reduction_pct}});
    out << std::setw(6) << row.crosslmm.frames << std::fixed << std::setprecision(2)
        << std::setw(17) << row.baseline.flops / 1e12 << std::setw(17)
        << row.crosslmm.flops / 1e12 << std::setw(11) << row.flops_reduction_pct << "%"
        << std::setw(8) << row.kv_reduction_pct << "%\n";
  }
  json scaling = {{"record", "scaling"},
                  {"from_frames", frames.front()},
                  {"to_frames", frames.back()},
                  {"crosslmm_flops_ratio", s.crosslmm_scaling},
                  {"baseline_flops_ratio", s.baseline_scaling}};
  if (!rc.reference.empty()) scaling["reference"] = rc.reference;
  file.write(scaling);
  out << "crosslmm FLOPs " << frames.front() << " -> " << frames.back() << " frames: "
      << std::fixed << std::setprecision(2) << s.crosslmm_scaling << "x";
  if (rc.reference.contains("flops_scaling_ratio"))
    out << " (reference " << rc.reference["flops_scaling_ratio"].get<double>() << "x)";
  out << '\n';
  return kExitOk;
}

inline int cmd_selfcheck(const Options& o, std::ostream& out) {
  const auto results = run_selfcheck();
  ReportFile file(o.out, "selfcheck.jsonl");
  bool all = true;
  for (const CheckResult& r : results) {
    file.write({{"module", r.module}, {"check", r.name}, {"pass", r.pass}, {"detail", r.detail}});
    out << std::left << std::setw(10) << r.module << std::setw(42) << r.name
        << (r.pass ? "PASS" : "FAIL") << (r.detail.empty() ? "" : "  " + r.detail) << '\n';
    all &= r.pass;
  }
  out << results.size() << " checks, " << (all ? "all passed" : "FAILURES") << '\n';
  return all ? kExitOk : kExitCheckFailed;
}

/// Entry point shared by the executable and in-process tests.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"CrossLMM toy model, gradient checks and cost model"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "Config file (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Override the config seed");
    sub->add_option("--out", o.out, "Report directory")->capture_default_str();
  };
  CLI::App* train_cmd = app.add_subcommand("train", "Two-stage training on synthetic captions");
  common(train_cmd, true);
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  common(grad_cmd, true);
  CLI::App* cost_cmd = app.add_subcommand("costmodel", "Baseline vs crosslmm cost sweep");
  common(cost_cmd, true);
  cost_cmd->add_option("--frames", o.frames, "Frame counts, e.g. 32,64,128,256")->delimiter(',');
  CLI::App* self_cmd = app.add_subcommand("selfcheck", "Run every invariant suite");
  common(self_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    if (*train_cmd) return cmd_train(o, out);
    if (*grad_cmd) return cmd_gradcheck(o, out);
    if (*cost_cmd) return cmd_costmodel(o, out);
    return cmd_selfcheck(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
}

}  // namespace crosslmm::cli
