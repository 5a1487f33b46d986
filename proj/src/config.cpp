#include "gfd/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "gfd/error.hpp"

namespace gfd {

using nlohmann::json;

std::string to_string(Task task) {
  return task == Task::kDetection ? "detection" : "attribution";
}

Task task_from_string(const std::string& name) {
  if (name == "attribution") return Task::kAttribution;
  if (name == "detection") return Task::kDetection;
  throw Error("bad_config", "unknown task '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw Error("bad_config", "train.lr must be > 0");
  if (!(gamma > 0 && gamma <= 1)) throw Error("bad_config", "train.gamma must be in (0, 1]");
  if (step_size < 1) throw Error("bad_config", "train.step_size must be >= 1");
  if (batch_size < 1) throw Error("bad_config", "train.batch_size must be >= 1");
  if (max_iters < 0 || pretrain_c_iters < 0) {
    throw Error("bad_config", "iteration counts must be >= 0");
  }
  if (checkpoint_every < 1 || val_every < 1) {
    throw Error("bad_config", "checkpoint_every and val_every must be >= 1");
  }
  weights.validate();
}

double learning_rate_at(const TrainConfig& config, int64_t iteration) {
  return config.lr * std::pow(config.gamma, static_cast<double>(iteration / config.step_size));
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw Error("bad_config", where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw Error("bad_config", "unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("bad_config", "bad value for '" + where + "." + key + "'");
  }
}

}  // namespace

json RunConfig::to_json() const {
  json doc;
  const auto& t = train;
  doc["train"] = {{"lr", t.lr},
                  {"gamma", t.gamma},
                  {"step_size", t.step_size},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"batch_size", t.batch_size},
                  {"max_iters", t.max_iters},
                  {"pretrain_c_iters", t.pretrain_c_iters},
                  {"checkpoint_every", t.checkpoint_every},
                  {"val_every", t.val_every},
                  {"seed", t.seed},
                  {"task", to_string(t.task)}};
  const auto& w = t.weights;
  doc["weights"] = {{"latent", w.latent},
                    {"adversarial", w.adversarial},
                    {"aux_cls", w.aux_cls},
                    {"perceptual", w.perceptual},
                    {"use_adversarial", w.use_adversarial},
                    {"use_aux_cls", w.use_aux_cls},
                    {"use_perceptual", w.use_perceptual}};
  doc["generator"] = {{"backbone", to_string(generator.backbone)},
                      {"base_channels", generator.base_channels},
                      {"depth", generator.depth}};
  doc["discriminator"] = {{"base_channels", discriminator.base_channels},
                          {"instance_norm", discriminator.instance_norm}};
  doc["classifier"] = {{"arch", classifier.arch}, {"width", classifier.width}};
  doc["perceptual"] = {{"base_channels", perceptual.base_channels},
                       {"weights", perceptual.weights},
                       {"seed", perceptual.seed}};
  doc["glcm"] = {{"distances", glcm.distances},
                 {"angles", glcm.angles},
                 {"levels", glcm.levels},
                 {"symmetric", glcm.symmetric}};
  doc["patch"] = {{"crop", patch.crop},
                  {"resize_to", patch.resize_to ? json(*patch.resize_to) : json(nullptr)}};
  doc["device"] = device;
  return doc;
}

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig c;
  reject_unknown(doc, {"train", "weights", "generator", "discriminator", "classifier",
                       "perceptual", "glcm", "patch", "device", "ablation"},
                 "config");
  if (doc.contains("train")) {
    const auto& s = doc["train"];
    reject_unknown(s, {"lr", "gamma", "step_size", "beta1", "beta2", "batch_size", "max_iters",
                       "pretrain_c_iters", "checkpoint_every", "val_every", "seed", "task"},
                   "train");
    read(s, "lr", c.train.lr, "train");
    read(s, "gamma", c.train.gamma, "train");
    read(s, "step_size", c.train.step_size, "train");
    read(s, "beta1", c.train.beta1, "train");
    read(s, "beta2", c.train.beta2, "train");
    read(s, "batch_size", c.train.batch_size, "train");
    read(s, "max_iters", c.train.max_iters, "train");
    read(s, "pretrain_c_iters", c.train.pretrain_c_iters, "train");
    read(s, "checkpoint_every", c.train.checkpoint_every, "train");
    read(s, "val_every", c.train.val_every, "train");
    read(s, "seed", c.train.seed, "train");
    if (s.contains("task")) {
      std::string task;
      read(s, "task", task, "train");
      c.train.task = task_from_string(task);
      // task selects the default weights; an explicit weights section wins
      c.train.weights = c.train.task == Task::kDetection ? LossWeights::detection_defaults()
                                                         : LossWeights::attribution_defaults();
    }
  }
  if (doc.contains("weights")) {
    const auto& s = doc["weights"];
    reject_unknown(s, {"latent", "adversarial", "aux_cls", "perceptual", "use_adversarial",
                       "use_aux_cls", "use_perceptual"},
                   "weights");
    auto& w = c.train.weights;
    read(s, "latent", w.latent, "weights");
    read(s, "adversarial", w.adversarial, "weights");
    read(s, "aux_cls", w.aux_cls, "weights");
    read(s, "perceptual", w.perceptual, "weights");
    read(s, "use_adversarial", w.use_adversarial, "weights");
    read(s, "use_aux_cls", w.use_aux_cls, "weights");
    read(s, "use_perceptual", w.use_perceptual, "weights");
  }
  if (doc.contains("ablation")) {
    std::string name;
    read(doc, "ablation", name, "config");
    c.train.weights = with_ablation(c.train.weights, ablation_from_string(name));
  }
  if (doc.contains("generator")) {
    const auto& s = doc["generator"];
    reject_unknown(s, {"backbone", "base_channels", "depth"}, "generator");
    if (s.contains("backbone")) {
      std::string b;
      read(s, "backbone", b, "generator");
      c.generator.backbone = backbone_from_string(b);
    }
    read(s, "base_channels", c.generator.base_channels, "generator");
    read(s, "depth", c.generator.depth, "generator");
  }
  if (doc.contains("discriminator")) {
    const auto& s = doc["discriminator"];
    reject_unknown(s, {"base_channels", "instance_norm"}, "discriminator");
    read(s, "base_channels", c.discriminator.base_channels, "discriminator");
    read(s, "instance_norm", c.discriminator.instance_norm, "discriminator");
  }
  if (doc.contains("classifier")) {
    const auto& s = doc["classifier"];
    reject_unknown(s, {"arch", "width"}, "classifier");
    read(s, "arch", c.classifier.arch, "classifier");
    read(s, "width", c.classifier.width, "classifier");
  }
  if (doc.contains("perceptual")) {
    const auto& s = doc["perceptual"];
    reject_unknown(s, {"base_channels", "weights", "seed"}, "perceptual");
    read(s, "base_channels", c.perceptual.base_channels, "perceptual");
    read(s, "weights", c.perceptual.weights, "perceptual");
    read(s, "seed", c.perceptual.seed, "perceptual");
  }
  if (doc.contains("glcm")) {
    const auto& s = doc["glcm"];
    reject_unknown(s, {"distances", "angles", "levels", "symmetric"}, "glcm");
    read(s, "distances", c.glcm.distances, "glcm");
    read(s, "angles", c.glcm.angles, "glcm");
    read(s, "levels", c.glcm.levels, "glcm");
    read(s, "symmetric", c.glcm.symmetric, "glcm");
  }
  if (doc.contains("patch")) {
    const auto& s = doc["patch"];
    reject_unknown(s, {"crop", "resize_to"}, "patch");
    read(s, "crop", c.patch.crop, "patch");
    if (s.contains("resize_to") && !s["resize_to"].is_null()) {
      int64_t r = 0;
      read(s, "resize_to", r, "patch");
      c.patch.resize_to = r;
    }
  }
  read(doc, "device", c.device, "config");
  c.validate();
  return c;
}

void RunConfig::validate() const {
  train.validate();
  GeneratorConfig g = generator;
  g.num_classes = std::max<int64_t>(2, g.num_classes);
  g.validate();
  discriminator.validate();
  ClassifierConfig cl = classifier;
  cl.num_classes = std::max<int64_t>(2, cl.num_classes);
  cl.validate();
  perceptual.validate();
  glcm.validate();
  if (patch.crop < 1) throw Error("bad_config", "patch.crop must be >= 1");
  if (patch.resize_to && *patch.resize_to < patch.crop) {
    throw Error("bad_config", "patch.crop must not exceed patch.resize_to");
  }
  if (patch.crop % generator.downsample_factor() != 0) {
    throw Error("bad_config", "patch.crop must be divisible by the generator's downsampling (" +
                                  std::to_string(generator.downsample_factor()) + ")");
  }
  if (device != "cpu" && device.rfind("cuda", 0) != 0) {
    throw Error("bad_config", "device must be cpu or cuda[:n]");
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("bad_config", std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || eq == 0) {
    throw Error("bad_config", "override must look like section.key=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json doc = to_json();
  if (dot == std::string::npos || dot > eq) {
    doc[path] = value;
  } else {
    const std::string section = path.substr(0, dot);
    const std::string key = path.substr(dot + 1);
    if (!doc.contains(section) || !doc[section].is_object()) {
      throw Error("bad_config", "unknown config section '" + section + "'");
    }
    doc[section][key] = value;
    if (section == "train" && key == "task") {
      // switching task re-selects the task's default weights
      for (const char* w : {"latent", "adversarial", "aux_cls", "perceptual"}) doc["weights"].erase(w);
    }
  }
  *this = from_json(doc);
}

PatchPolicy RunConfig::patch_policy(int64_t native_resolution,
                                    std::optional<int64_t> manifest_resize, CropMode mode) const {
  PatchPolicy p = PatchPolicy::defaults_for(native_resolution, mode, patch.crop);
  if (manifest_resize) p.resize_to = manifest_resize;
  if (patch.resize_to) p.resize_to = patch.resize_to;
  return p;
}

}  // namespace gfd
