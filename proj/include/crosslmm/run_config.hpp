#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosslmm/config.hpp"
#include "crosslmm/costmodel.hpp"
#include "crosslmm/error.hpp"
#include "crosslmm/gradcheck.hpp"
#include "crosslmm/training.hpp"

namespace crosslmm {

using json = nlohmann::ordered_json;

struct TrainSettings {
  std::size_t samples = 8;
  std::size_t frames = 2;
  std::size_t stage1_steps = 100;
  std::size_t stage2_steps = 300;
  AdamConfig adam;
};

struct CostSettings {
  double bytes_per_value = 2.0;
  double device_throughput = 1e15;
  std::uint64_t text_len = 64;
  std::vector<std::uint64_t> frames;
};

struct GradcheckSettings {
  GradcheckOptions options;
  std::optional<double> gamma_init;  // replaces model.gamma_init for the check only
};

struct RunConfig {
  std::string preset;
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainSettings train;
  CostSettings cost;
  GradcheckSettings gradcheck;
  json reference;  // published values printed next to modeled ones

  CostConfig cost_config() const {
    return {model, cost.bytes_per_value, cost.device_throughput, Variant::crosslmm};
  }
  std::vector<TrainStage> stages() const {
    return {TrainStage::stage1(train.stage1_steps), TrainStage::stage2(train.stage2_steps)};
  }
};

namespace detail {

inline json toy_preset() {
  return json::parse(R"({
    "seed": 7,
    "model": {
      "grid": 4, "patch_size": 2, "pool_window": 2, "vision_dim": 8,
      "vision_layers": 0, "vision_heads": 2, "vision_ffn": 16, "max_frames": 8,
      "projector_hidden": 16, "hidden": 16, "n_layers": 2, "n_heads": 2, "ffn": 32,
      "insert_every": 2, "vocab": 8, "max_seq": 64, "gate_mode": "paper",
      "v2v_enabled": true, "t2v_enabled": true, "gamma_init": 1.0,
      "rope_base": 10000.0, "norm_eps": 1e-5
    },
    "train": {
      "samples": 8, "frames": 2, "stage1_steps": 100, "stage2_steps": 300,
      "lr": 3e-4, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.0
    },
    "gradcheck": {
      "coords_per_group": 32, "threshold": 1e-4, "step": 1e-5, "floor": 1e-6,
      "max_params": 1000000, "frames": 2, "gamma_init": 0.5
    },
    "cost": {
      "bytes_per_value": 8, "device_throughput": 1e9, "text_len": 3,
      "frames": [1, 2, 4, 8]
    },
    "reference": {}
  })");
}

// SigLIP-style 27x27 grid of 14-pixel patches feeding a Qwen2.5-style decoder.
inline json large_preset(std::size_t hidden, std::size_t heads, std::size_t ffn,
                         std::size_t insert_every, std::size_t vocab) {
  json p = toy_preset();
  p["model"] = {{"grid", 27},         {"patch_size", 14},        {"pool_window", 9},
                {"vision_dim", 1152}, {"vision_layers", 27},     {"vision_heads", 16},
                {"vision_ffn", 4304}, {"max_frames", 256},       {"projector_hidden", hidden},
                {"hidden", hidden},   {"n_layers", 28},          {"n_heads", heads},
                {"ffn", ffn},         {"insert_every", insert_every}, {"vocab", vocab},
                {"max_seq", 32768},   {"gate_mode", "paper"},    {"v2v_enabled", true},
                {"t2v_enabled", true}, {"gamma_init", 1.0},      {"rope_base", 1000000.0},
                {"norm_eps", 1e-6}};
  p["cost"] = {{"bytes_per_value", 2},
               {"device_throughput", 3.12e14},
               {"text_len", 64},
               {"frames", {32, 64, 128, 256}}};
  return p;
}

inline json preset_json(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "toy-overfit") {
    json p = toy_preset();
    p["train"]["lr"] = 3e-3;
    return p;
  }
  if (name == "2b-like") {
    json p = large_preset(1536, 12, 8960, 4, 151936);
    p["reference"] = {{"flops_scaling_ratio", 7.94},
                      {"crosslmm_tflops", {{"32", 10.93}, {"256", 86.82}}}};
    return p;
  }
  if (name == "7b-like") {
    json p = large_preset(3584, 28, 18944, 8, 152064);
    p["reference"] = {{"flops_reduction_pct", {{"32", 76.9}, {"256", 67.7}}},
                      {"kv_reduction_pct", {{"256", 87.5}}},
                      {"crosslmm_tflops", {{"32", 13.17}}}};
    return p;
  }
  if (name == "no-dcal") {
    json p = large_preset(1536, 12, 8960, 4, 151936);
    p["model"]["pool_window"] = 1;
    p["model"]["insert_every"] = 0;
    return p;
  }
  throw ConfigError("unknown preset \"" + name +
                    "\" (expected toy, toy-overfit, 2b-like, 7b-like or no-dcal)");
}

inline std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

/// Copies `user` over `base`; every user key must already exist in the preset.
inline void overlay(json& base, const json& user, const std::string& path) {
  for (const auto& [key, value] : user.items()) {
    const std::string at = join_path(path, key);
    if (path.empty() && key == "preset") continue;
    if (!base.contains(key)) throw ConfigError("unknown key " + at);
    json& slot = base[key];
    if (slot.is_object() && key != "reference") {
      if (!value.is_object()) throw ConfigError("key " + at + " must be an object");
      overlay(slot, value, at);
    } else {
      slot = value;
    }
  }
}

class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  const json& node(const std::string& path) const {
    const json* cur = &root_;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (cur->is_array()) {
        const std::size_t i = std::stoul(key);
        if (i >= cur->size()) throw ConfigError("missing required key " + path);
        cur = &(*cur)[i];
      } else {
        if (!cur->is_object() || !cur->contains(key))
          throw ConfigError("missing required key " + path);
        cur = &(*cur)[key];
      }
      if (dot == std::string::npos) return *cur;
      start = dot + 1;
    }
  }
  std::size_t size(const std::string& path) const {
    const json& n = node(path);
    if (n.is_number_unsigned()) return n.get<std::size_t>();
    if (n.is_number_integer() && n.get<long long>() >= 0) return n.get<std::size_t>();
    if (n.is_number_float() && n.get<double>() >= 0 && n.get<double>() == std::floor(n.get<double>()))
      return static_cast<std::size_t>(n.get<double>());
    throw ConfigError("key " + path + " must be a non-negative integer");
  }
  double number(const std::string& path) const {
    const json& n = node(path);
    if (!n.is_number()) throw ConfigError("key " + path + " must be a number");
    return n.get<double>();
  }
  bool boolean(const std::string& path) const {
    const json& n = node(path);
    if (!n.is_boolean()) throw ConfigError("key " + path + " must be true or false");
    return n.get<bool>();
  }
  std::string string(const std::string& path) const {
    const json& n = node(path);
    if (!n.is_string()) throw ConfigError("key " + path + " must be a string");
    return n.get<std::string>();
  }

 private:
  const json& root_;
};

}  // namespace detail

/// Resolves a config document: the named preset overlaid with the user's keys.
inline RunConfig resolve_config(const json& user) {
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  if (!user.contains("preset")) throw ConfigError("missing required key preset");
  if (!user["preset"].is_string()) throw ConfigError("key preset must be a string");
  RunConfig rc;
  rc.preset = user["preset"].get<std::string>();
  json doc = detail::preset_json(rc.preset);
  detail::overlay(doc, user, "");
  const detail::Reader r(doc);

  rc.seed = r.size("seed");
  ModelConfig& m = rc.model;
  m.grid = r.size("model.grid");
  m.patch_size = r.size("model.patch_size");
  m.pool_window = r.size("model.pool_window");
  m.vision_dim = r.size("model.vision_dim");
  m.vision_layers = r.size("model.vision_layers");
  m.vision_heads = r.size("model.vision_heads");
  m.vision_ffn = r.size("model.vision_ffn");
  m.max_frames = r.size("model.max_frames");
  m.projector_hidden = r.size("model.projector_hidden");
  m.hidden = r.size("model.hidden");
  m.n_layers = r.size("model.n_layers");
  m.n_heads = r.size("model.n_heads");
  m.ffn = r.size("model.ffn");
  m.insert_every = r.size("model.insert_every");
  m.vocab = r.size("model.vocab");
  m.max_seq = r.size("model.max_seq");
  m.gate_mode = gate_mode_from_string(r.string("model.gate_mode"));
  m.v2v_enabled = r.boolean("model.v2v_enabled");
  m.t2v_enabled = r.boolean("model.t2v_enabled");
  m.gamma_init = r.number("model.gamma_init");
  m.rope_base = r.number("model.rope_base");
  m.norm_eps = r.number("model.norm_eps");
  m.seed = rc.seed;

  rc.train.samples = r.size("train.samples");
  rc.train.frames = r.size("train.frames");
  rc.train.stage1_steps = r.size("train.stage1_steps");
  rc.train.stage2_steps = r.size("train.stage2_steps");
  rc.train.adam.lr = r.number("train.lr");
  rc.train.adam.beta1 = r.number("train.beta1");
  rc.train.adam.beta2 = r.number("train.beta2");
  rc.train.adam.eps = r.number("train.eps");
  rc.train.adam.weight_decay = r.number("train.weight_decay");

  GradcheckOptions& g = rc.gradcheck.options;
  g.coords_per_group = r.size("gradcheck.coords_per_group");
  g.threshold = r.number("gradcheck.threshold");
  g.step = r.number("gradcheck.step");
  g.floor = r.number("gradcheck.floor");
  g.max_params = r.size("gradcheck.max_params");
  g.frames = r.size("gradcheck.frames");
  g.seed = rc.seed;
  if (!r.node("gradcheck.gamma_init").is_null())
    rc.gradcheck.gamma_init = r.number("gradcheck.gamma_init");

  rc.cost.bytes_per_value = r.number("cost.bytes_per_value");
  rc.cost.device_throughput = r.number("cost.device_throughput");
  rc.cost.text_len = r.size("cost.text_len");
  const json& frames = r.node("cost.frames");
  if (!frames.is_array() || frames.empty())
    throw ConfigError("key cost.frames must be a non-empty array");
  for (std::size_t i = 0; i < frames.size(); ++i)
    rc.cost.frames.push_back(r.size("cost.frames." + std::to_string(i)));
  rc.reference = r.node("reference");

  m.validate();
  rc.cost_config().validate();
  if (rc.train.samples == 0 || rc.train.frames == 0)
    throw ConfigError("train.samples and train.frames must be positive");
  if (!(rc.train.adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (rc.gradcheck.options.coords_per_group == 0)
    throw ConfigError("gradcheck.coords_per_group must be positive");
  return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return resolve_config(doc);
}

}  // namespace crosslmm
