#include "cbn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cbn/errors.hpp"

namespace cbn {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ArgumentError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ArgumentError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ArgumentError("config key '" + where + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ArgumentError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(root,
                 {"name", "dataset", "model", "normalizer", "batch_size", "epochs", "base_lr", "lr_schedule",
                  "lr_milestones", "momentum", "weight_decay", "seed", "output_dir", "eval_batch_size", "diagnostics"},
                 "");
  TrainConfig c;
  read(root, "name", c.name, "");
  read(root, "model", c.model, "");
  read(root, "batch_size", c.batch_size, "");
  read(root, "epochs", c.epochs, "");
  read(root, "base_lr", c.base_lr, "");
  read(root, "lr_schedule", c.lr_schedule, "");
  read(root, "lr_milestones", c.lr_milestones, "");
  read(root, "momentum", c.momentum, "");
  read(root, "weight_decay", c.weight_decay, "");
  read(root, "seed", c.seed, "");
  read(root, "output_dir", c.output_dir, "");
  read(root, "eval_batch_size", c.eval_batch_size, "");

  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    const std::string w = "dataset.";
    reject_unknown(d,
                   {"kind", "path", "train_subset", "eval_subset", "downsample", "mean", "std", "flip",
                    "crop_padding", "classes", "train_size", "eval_size", "image_shape", "noise", "data_seed"},
                   w);
    auto& s = c.dataset;
    read(d, "kind", s.kind, w);
    read(d, "path", s.path, w);
    read(d, "train_subset", s.train_subset, w);
    read(d, "eval_subset", s.eval_subset, w);
    read(d, "downsample", s.downsample, w);
    read(d, "mean", s.mean, w);
    read(d, "std", s.stddev, w);
    read(d, "flip", s.flip, w);
    read(d, "crop_padding", s.crop_padding, w);
    read(d, "classes", s.classes, w);
    read(d, "train_size", s.train_size, w);
    read(d, "eval_size", s.eval_size, w);
    read(d, "image_shape", s.image_shape, w);
    read(d, "noise", s.noise, w);
    read(d, "data_seed", s.data_seed, w);
  }
  if (root.contains("normalizer")) {
    const json& n = root["normalizer"];
    const std::string w = "normalizer.";
    reject_unknown(n, {"kind", "window", "burn_in_epochs", "epsilon", "decay", "taylor_backprop"}, w);
    std::string kind = to_string(c.normalizer.kind);
    read(n, "kind", kind, w);
    c.normalizer.kind = parse_norm_kind(kind);
    if (n.contains("window") && n["window"].is_string()) {
      if (n["window"].get<std::string>() != "auto") throw ArgumentError("normalizer.window must be a number or \"auto\"");
      c.normalizer.window = 0;
    } else {
      read(n, "window", c.normalizer.window, w);
    }
    read(n, "burn_in_epochs", c.normalizer.burn_in_epochs, w);
    read(n, "epsilon", c.normalizer.epsilon, w);
    read(n, "decay", c.normalizer.decay, w);
    read(n, "taylor_backprop", c.normalizer.taylor_backprop, w);
  }
  if (root.contains("diagnostics")) {
    const json& d = root["diagnostics"];
    const std::string w = "diagnostics.";
    reject_unknown(d, {"enabled", "batch_size", "every_epochs"}, w);
    read(d, "enabled", c.diagnostics.enabled, w);
    read(d, "batch_size", c.diagnostics.batch_size, w);
    read(d, "every_epochs", c.diagnostics.every_epochs, w);
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ArgumentError& e) {
    throw ArgumentError(path.string() + ": " + e.what());
  }
}

std::string config_to_json(const TrainConfig& c) {
  json j;
  j["name"] = c.name;
  j["model"] = c.model;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["base_lr"] = c.base_lr;
  j["lr_schedule"] = c.lr_schedule;
  j["lr_milestones"] = c.lr_milestones;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["eval_batch_size"] = c.eval_batch_size;
  const auto& d = c.dataset;
  j["dataset"] = {{"kind", d.kind},         {"path", d.path},           {"train_subset", d.train_subset},
                  {"eval_subset", d.eval_subset}, {"downsample", d.downsample}, {"mean", d.mean},
                  {"std", d.stddev},        {"flip", d.flip},           {"crop_padding", d.crop_padding},
                  {"classes", d.classes},   {"train_size", d.train_size}, {"eval_size", d.eval_size},
                  {"image_shape", d.image_shape}, {"noise", d.noise}, {"data_seed", d.data_seed}};
  const auto& n = c.normalizer;
  j["normalizer"] = {{"kind", to_string(n.kind)}, {"window", n.window},   {"burn_in_epochs", n.burn_in_epochs},
                     {"epsilon", n.epsilon},      {"decay", n.decay},     {"taylor_backprop", n.taylor_backprop}};
  j["diagnostics"] = {{"enabled", c.diagnostics.enabled},
                      {"batch_size", c.diagnostics.batch_size},
                      {"every_epochs", c.diagnostics.every_epochs}};
  return j.dump(2);
}

void validate(const TrainConfig& c) {
  if (c.batch_size < 1) throw ArgumentError("batch_size must be at least 1");
  if (c.epochs < 1) throw ArgumentError("epochs must be at least 1");
  if (!(c.base_lr > 0.0)) throw ArgumentError("base_lr must be positive");
  if (c.lr_schedule != "cosine" && c.lr_schedule != "step") throw ArgumentError("lr_schedule must be cosine or step");
  if (c.model != "desk4" && c.model != "tiny") throw ArgumentError("model must be desk4 or tiny");
  if (c.eval_batch_size < 1) throw ArgumentError("eval_batch_size must be at least 1");
  if (c.normalizer.burn_in_epochs < 0.0) throw ArgumentError("burn_in_epochs must be non-negative");
  if (!(c.normalizer.epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  if (!(c.normalizer.decay > 0.0 && c.normalizer.decay < 1.0)) throw ArgumentError("decay must lie in (0, 1)");
  if (c.dataset.downsample < 1) throw ArgumentError("dataset.downsample must be at least 1");
  if (!(c.dataset.stddev > 0.0)) throw ArgumentError("dataset.std must be positive");
  if (c.diagnostics.enabled && (c.diagnostics.batch_size < 1 || c.diagnostics.every_epochs < 1)) {
    throw ArgumentError("diagnostics batch_size and every_epochs must be positive");
  }
}

}  // namespace cbn
