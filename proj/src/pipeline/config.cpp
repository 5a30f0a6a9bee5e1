#include "cloudmamba/pipeline/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>

namespace cloudmamba::pipeline {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&, const std::string&)>;

[[noreturn]] void wrong_type(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "' must be " + expected);
}

template <class T>
Setter bind(T& field) {
  return [&field](const json& v, const std::string& key) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) wrong_type(key, "a boolean");
      field = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) wrong_type(key, "a non-negative integer");
      field = v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) wrong_type(key, "an integer");
      field = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) wrong_type(key, "a number");
      field = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) wrong_type(key, "a string");
      field = v.get<std::string>();
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  };
}

void apply(const json& root, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!root.contains(section)) return;
  const json& obj = root.at(section);
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string dotted = section + "." + key;
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + dotted + "'");
    it->second(value, dotted);
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  thresholds.validate();
  const auto& o = optimizer;
  // lr = 0 is allowed: it turns training into a no-update evaluation run.
  if (!(o.lr >= 0)) throw ConfigError("optimizer.lr must be >= 0");
  if (!(o.weight_decay >= 0)) throw ConfigError("optimizer.weight_decay must be >= 0");
  if (!(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(o.eps > 0)) throw ConfigError("optimizer.eps must be > 0");
  if (!(o.lr_min_factor >= 0 && o.lr_min_factor <= 1)) throw ConfigError("optimizer.lr_min_factor must lie in [0, 1]");
  if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
  if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (data.patch_size < 2) throw ConfigError("data.patch_size must be >= 2");
  if (data.synth_count < 0) throw ConfigError("data.synth_count must be >= 0");
  if (!(data.test_fraction >= 0 && data.test_fraction <= 1)) throw ConfigError("data.test_fraction must lie in [0, 1]");
}

RunConfig preset(const std::string& name) {
  RunConfig cfg;
  if (name == "paper") {
    cfg.data.patch_size = 512;
    return cfg;
  }
  if (name == "desk") {
    cfg.model.levels = 3;
    cfg.model.base_channels = 16;
    cfg.data.patch_size = 64;
    cfg.data.synth_count = 200;
    cfg.training.epochs = 5;
    cfg.training.batch_size = 8;
    cfg.training.seed = 42;
    // Five epochs of 23 steps are too few for 1e-4 to move a fresh network.
    cfg.optimizer.lr = 3e-3;
    cfg.data.dataset = "data/desk";
    cfg.data.output = "runs/desk";
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

json to_json(const RunConfig& c) {
  json aux = json::array();
  for (Real a : c.loss.aux_weights) aux.push_back(a);
  return {
      {"model",
       {{"levels", c.model.levels},
        {"base_channels", c.model.base_channels},
        {"max_channels", c.model.max_channels},
        {"state_dim", c.model.state_dim},
        {"input_bands", c.model.input_bands},
        {"dilations", c.model.dilations},
        {"mamba", nn::to_string(c.model.mamba)},
        {"use_refiner", c.model.use_refiner}}},
      {"loss",
       {{"lambda_bce", c.loss.lambda_bce},
        {"lambda_dice", c.loss.lambda_dice},
        {"dice_eps", c.loss.dice_eps},
        {"aux_weights", aux},
        {"supervise_refiner", c.loss.supervise_refiner}}},
      {"thresholds",
       {{"gamma", c.thresholds.gamma}, {"tau_coarse", c.thresholds.tau_coarse}, {"tau_refined", c.thresholds.tau_refined}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"weight_decay", c.optimizer.weight_decay},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps},
        {"lr_min_factor", c.optimizer.lr_min_factor}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"seed", c.training.seed},
        {"deterministic", c.training.deterministic},
        {"augment", c.training.augment}}},
      {"data",
       {{"dataset", c.data.dataset},
        {"output", c.data.output},
        {"patch_size", c.data.patch_size},
        {"synth_count", c.data.synth_count},
        {"test_fraction", c.data.test_fraction}}},
  };
}

RunConfig merge_json(RunConfig c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> sections{"model", "loss", "thresholds", "optimizer", "training", "data"};
  for (const auto& [key, value] : j.items())
    if (!sections.count(key)) throw ConfigError("unknown config section '" + key + "'");

  auto& m = c.model;
  apply(j, "model",
        {{"levels", bind(m.levels)},
         {"base_channels", bind(m.base_channels)},
         {"max_channels", bind(m.max_channels)},
         {"state_dim", bind(m.state_dim)},
         {"input_bands", bind(m.input_bands)},
         {"dilations",
          [&m](const json& v, const std::string& key) {
            if (!v.is_array() || v.size() != 3) wrong_type(key, "an array of three integers");
            for (int i = 0; i < 3; ++i) bind(m.dilations[i])(v[i], key);
          }},
         {"mamba",
          [&m](const json& v, const std::string& key) {
            if (!v.is_string()) wrong_type(key, "one of none, plain, separate, fused");
            m.mamba = nn::parse_mamba_variant(v.get<std::string>());
          }},
         {"use_refiner", bind(m.use_refiner)}});
  auto& l = c.loss;
  apply(j, "loss",
        {{"lambda_bce", bind(l.lambda_bce)},
         {"lambda_dice", bind(l.lambda_dice)},
         {"dice_eps", bind(l.dice_eps)},
         {"aux_weights",
          [&l](const json& v, const std::string& key) {
            if (!v.is_array()) wrong_type(key, "an array of numbers");
            l.aux_weights.assign(v.size(), 0);
            for (std::size_t i = 0; i < v.size(); ++i) bind(l.aux_weights[i])(v[i], key);
          }},
         {"supervise_refiner", bind(l.supervise_refiner)}});
  auto& t = c.thresholds;
  apply(j, "thresholds",
        {{"gamma", bind(t.gamma)}, {"tau_coarse", bind(t.tau_coarse)}, {"tau_refined", bind(t.tau_refined)}});
  auto& o = c.optimizer;
  apply(j, "optimizer",
        {{"lr", bind(o.lr)},
         {"weight_decay", bind(o.weight_decay)},
         {"beta1", bind(o.beta1)},
         {"beta2", bind(o.beta2)},
         {"eps", bind(o.eps)},
         {"lr_min_factor", bind(o.lr_min_factor)}});
  auto& r = c.training;
  apply(j, "training",
        {{"epochs", bind(r.epochs)},
         {"batch_size", bind(r.batch_size)},
         {"seed", bind(r.seed)},
         {"deterministic", bind(r.deterministic)},
         {"augment", bind(r.augment)}});
  auto& d = c.data;
  apply(j, "data",
        {{"dataset", bind(d.dataset)},
         {"output", bind(d.output)},
         {"patch_size", bind(d.patch_size)},
         {"synth_count", bind(d.synth_count)},
         {"test_fraction", bind(d.test_fraction)}});
  return c;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return merge_json(std::move(base), j);
}

std::vector<std::string> model_differences(const model::ModelConfig& a, const model::ModelConfig& b) {
  const json ja = to_json(RunConfig{a, {}, {}, {}, {}, {}})["model"];
  const json jb = to_json(RunConfig{b, {}, {}, {}, {}, {}})["model"];
  std::vector<std::string> out;
  for (const auto& [key, value] : ja.items())
    if (jb.at(key) != value) out.push_back("model." + key);
  return out;
}

}  // namespace cloudmamba::pipeline
