#include "facepatch/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace facepatch {

using nlohmann::json;

namespace {

constexpr int kConfigVersion = 1;

void reject_unknown(const json& obj, const std::string& block, std::initializer_list<const char*> known) {
  if (!obj.is_object()) throw std::invalid_argument("config: '" + block + "' must be an object");
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw std::invalid_argument("config: unknown field '" + block + "." + key + "'");
}

template <class V>
void read(const json& obj, const char* key, V& out) {
  if (obj.contains(key)) out = obj.at(key).get<V>();
}

void read_range(const json& obj, const char* key, Range& r) {
  if (!obj.contains(key)) return;
  const auto v = obj.at(key).get<std::vector<double>>();
  if (v.size() != 2) throw std::invalid_argument(std::string("config: transforms.") + key + " must be [lo, hi]");
  r = {v[0], v[1]};
}

json range_json(const Range& r) {
  return json::array({r.lo, r.hi});
}

}  // namespace

void TrainingConfig::validate() const {
  pyramid.validate();
  transforms.validate();
  loss.validate();
  trainer.validate();
  if (attack_scales) attack_scales->validate();
}

TrainingConfig parse_config(const std::string& json_text) {
  TrainingConfig c;
  try {
    const json root = json::parse(json_text);
    reject_unknown(root, "config", {"version", "pyramid", "transforms", "loss", "trainer", "attack_scales"});
    if (root.contains("version") && root.at("version").get<int>() != kConfigVersion)
      throw std::invalid_argument("config: unsupported version " + root.at("version").dump());

    if (root.contains("pyramid")) {
      const auto& p = root.at("pyramid");
      reject_unknown(p, "pyramid", {"min_size", "factor", "thresholds", "nms_intra_scale", "nms_cross_stage"});
      read(p, "min_size", c.pyramid.min_size);
      read(p, "factor", c.pyramid.factor);
      read(p, "thresholds", c.pyramid.thresholds);
      read(p, "nms_intra_scale", c.pyramid.nms_intra_scale);
      read(p, "nms_cross_stage", c.pyramid.nms_cross_stage);
    }
    if (root.contains("transforms")) {
      const auto& t = root.at("transforms");
      reject_unknown(t, "transforms", {"brightness", "contrast", "scale", "noise_sigma", "seed"});
      read_range(t, "brightness", c.transforms.brightness);
      read_range(t, "contrast", c.transforms.contrast);
      read_range(t, "scale", c.transforms.scale);
      read_range(t, "noise_sigma", c.transforms.noise_sigma);
      read(t, "seed", c.transforms.seed);
    }
    if (root.contains("loss")) {
      const auto& l = root.at("loss");
      reject_unknown(l, "loss", {"alpha", "beta", "clf_norm", "face_mask_only"});
      read(l, "alpha", c.loss.alpha);
      read(l, "beta", c.loss.beta);
      if (l.contains("clf_norm")) c.loss.clf_norm = parse_clf_norm(l.at("clf_norm").get<std::string>());
      read(l, "face_mask_only", c.loss.face_mask_only);
    }
    if (root.contains("trainer")) {
      const auto& t = root.at("trainer");
      reject_unknown(t, "trainer", {"epochs", "batch_size", "rule", "step_size", "epsilon", "momentum_decay", "seed",
                                    "checkpoint_interval", "init"});
      read(t, "epochs", c.trainer.epochs);
      read(t, "batch_size", c.trainer.batch_size);
      if (t.contains("rule")) c.trainer.rule = parse_step_rule(t.at("rule").get<std::string>());
      read(t, "step_size", c.trainer.step_size);
      if (t.contains("epsilon") && !t.at("epsilon").is_null()) c.trainer.epsilon = t.at("epsilon").get<double>();
      read(t, "momentum_decay", c.trainer.momentum_decay);
      read(t, "seed", c.trainer.seed);
      read(t, "checkpoint_interval", c.trainer.checkpoint_interval);
      if (t.contains("init")) c.trainer.init = parse_patch_init(t.at("init").get<std::string>());
    }
    if (root.contains("attack_scales") && !root.at("attack_scales").is_null()) {
      const auto& a = root.at("attack_scales");
      reject_unknown(a, "attack_scales", {"scales", "strategy"});
      AttackScaleSet s;
      s.scales = a.at("scales").get<std::array<double, 3>>();
      if (a.contains("strategy")) s.strategy = parse_scale_strategy(a.at("strategy").get<std::string>());
      c.attack_scales = s;
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string format_config(const TrainingConfig& c) {
  json root;
  root["version"] = kConfigVersion;
  root["pyramid"] = {{"min_size", c.pyramid.min_size},
                     {"factor", c.pyramid.factor},
                     {"thresholds", c.pyramid.thresholds},
                     {"nms_intra_scale", c.pyramid.nms_intra_scale},
                     {"nms_cross_stage", c.pyramid.nms_cross_stage}};
  root["transforms"] = {{"brightness", range_json(c.transforms.brightness)},
                        {"contrast", range_json(c.transforms.contrast)},
                        {"scale", range_json(c.transforms.scale)},
                        {"noise_sigma", range_json(c.transforms.noise_sigma)},
                        {"seed", c.transforms.seed}};
  root["loss"] = {{"alpha", c.loss.alpha},
                  {"beta", c.loss.beta},
                  {"clf_norm", to_string(c.loss.clf_norm)},
                  {"face_mask_only", c.loss.face_mask_only}};
  root["trainer"] = {{"epochs", c.trainer.epochs},
                     {"batch_size", c.trainer.batch_size},
                     {"rule", to_string(c.trainer.rule)},
                     {"step_size", c.trainer.step_size},
                     {"epsilon", c.trainer.epsilon ? json(*c.trainer.epsilon) : json(nullptr)},
                     {"momentum_decay", c.trainer.momentum_decay},
                     {"seed", c.trainer.seed},
                     {"checkpoint_interval", c.trainer.checkpoint_interval},
                     {"init", to_string(c.trainer.init)}};
  if (c.attack_scales)
    root["attack_scales"] = {{"scales", c.attack_scales->scales}, {"strategy", to_string(c.attack_scales->strategy)}};
  return root.dump(2) + "\n";
}

TrainingConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void save_config(const TrainingConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  out << format_config(config);
  if (!out) throw std::runtime_error("failed writing config " + path.string());
}

}  // namespace facepatch
