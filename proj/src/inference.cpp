#include "gfd/inference.hpp"

#include "gfd/error.hpp"
#include "gfd/image_io.hpp"

namespace gfd {

PatchPolicy LoadedModel::eval_policy() const {
  PatchPolicy p;
  p.resize_to = meta.resize_to;
  p.crop = meta.crop;
  p.mode = CropMode::kEval;
  return p;
}

int64_t LoadedModel::real_index() const {
  for (const auto& l : meta.labels) {
    if (l.is_real) return l.index;
  }
  throw Error("no_real_class", "checkpoint taxonomy has no real class");
}

LoadedModel load_model(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error("missing_checkpoint", "checkpoint directory not found: " + dir.string());
  }
  LoadedModel m;
  m.meta = read_meta(dir);
  m.config = RunConfig::load(dir / "config.json");
  auto gcfg = m.config.generator;
  gcfg.num_classes = m.num_classes();
  m.generator = Generator(gcfg);
  m.head = ClassificationHead(m.generator->latent_channels(), m.num_classes());
  load_network(dir, "G", *m.generator, m.meta);
  load_network(dir, "H", *m.head, m.meta);
  m.generator->eval();
  m.head->eval();
  return m;
}

torch::Tensor inference_logits(GeneratorImpl& generator, ClassificationHeadImpl& head,
                               const torch::Tensor& patches) {
  torch::NoGradGuard guard;
  const bool g_training = generator.is_training(), h_training = head.is_training();
  generator.eval();
  head.eval();
  auto logits = head.forward(generator.encode(patches));
  generator.train(g_training);
  head.train(h_training);
  return logits;
}

ImageTensor eval_patch(const LoadedModel& model, const ImageTensor& image) {
  Rng unused(0);
  return prepare_patch(image, model.eval_policy(), unused);
}

Prediction attribute(LoadedModel& model, const ImageTensor& image) {
  auto patch = eval_patch(model, image);
  auto logits = inference_logits(*model.generator, *model.head, patch.pixels().unsqueeze(0));
  return make_prediction(logits[0]);
}

std::vector<Detection> detect_batch(LoadedModel& model, const std::vector<ImageTensor>& images) {
  if (images.empty()) return {};
  std::vector<torch::Tensor> patches;
  for (const auto& img : images) patches.push_back(eval_patch(model, img).pixels());
  auto logits = inference_logits(*model.generator, *model.head, torch::stack(patches));
  auto probs = torch::softmax(logits.to(torch::kFloat64), 1);
  const int64_t real = model.real_index();
  std::vector<Detection> out;
  for (int64_t i = 0; i < probs.size(0); ++i) {
    const double score = 1.0 - probs[i][real].item<double>();
    out.push_back({score > 0.5, score});
  }
  return out;
}

Detection detect(LoadedModel& model, const ImageTensor& image) {
  return detect_batch(model, {image}).front();
}

Fingerprint extract_fingerprint(LoadedModel& model, const ImageTensor& image) {
  auto patch = eval_patch(model, image);
  torch::NoGradGuard guard;
  model.generator->eval();
  auto out = model.generator->forward(patch.pixels().unsqueeze(0));
  return Fingerprint(out.fingerprint[0].contiguous());
}

std::string to_string(EvalMode mode) { return mode == EvalMode::kOpen ? "open" : "closed"; }

EvalMode eval_mode_from_string(const std::string& name) {
  if (name == "closed") return EvalMode::kClosed;
  if (name == "open") return EvalMode::kOpen;
  throw Error("bad_config", "eval mode must be closed or open");
}

std::vector<int64_t> label_mapping(const DatasetManifest& manifest,
                                   const std::vector<SourceLabel>& labels, Task task) {
  std::vector<int64_t> map;
  if (task == Task::kDetection) {
    int64_t real = -1, fake = -1;
    for (const auto& l : labels) (l.is_real ? real : fake) = l.index;
    if (labels.size() != 2 || real < 0 || fake < 0) {
      throw Error("taxonomy_mismatch", "detection model must have one real and one fake label");
    }
    for (const auto& c : manifest.classes) map.push_back(c.label.is_real ? real : fake);
    return map;
  }
  if (manifest.classes.size() != labels.size()) {
    throw Error("taxonomy_mismatch", "manifest has " + std::to_string(manifest.classes.size()) +
                                         " classes, model has " + std::to_string(labels.size()));
  }
  for (const auto& c : manifest.classes) {
    int64_t found = -1;
    for (const auto& l : labels) {
      if (l.name == c.label.name && l.is_real == c.label.is_real) found = l.index;
    }
    if (found < 0) {
      throw Error("taxonomy_mismatch", "class '" + c.label.name + "' is not in the model taxonomy");
    }
    map.push_back(found);
  }
  return map;
}

EvalReport evaluate_networks(GeneratorImpl& generator, ClassificationHeadImpl& head,
                             const DatasetManifest& manifest, Split split,
                             const PatchPolicy& policy, const std::vector<SourceLabel>& labels,
                             Task task, EvalMode mode, int64_t chunk) {
  const auto map = label_mapping(manifest, labels, task);
  const auto samples = manifest.samples(split);
  if (samples.empty()) throw Error("empty_split", "no samples in split " + to_string(split));

  const size_t K = labels.size();
  EvalReport r;
  r.mode = mode;
  r.task = task;
  for (const auto& l : labels) r.class_names.push_back(l.name);
  r.confusion.assign(K, std::vector<int64_t>(K, 0));
  for (const auto& c : manifest.classes) r.per_testset.push_back({c.label.name});

  PatchPolicy eval = policy;
  eval.mode = CropMode::kEval;
  Rng unused(0);
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(chunk)) {
    const size_t end = std::min(samples.size(), start + static_cast<size_t>(chunk));
    std::vector<torch::Tensor> patches;
    for (size_t i = start; i < end; ++i) {
      patches.push_back(prepare_patch(read_image(samples[i].path), eval, unused).pixels());
    }
    auto predicted = inference_logits(generator, head, torch::stack(patches)).argmax(1);
    for (size_t i = start; i < end; ++i) {
      const auto manifest_index = static_cast<size_t>(samples[i].label.index);
      const int64_t truth = map[manifest_index];
      const int64_t guess = predicted[static_cast<int64_t>(i - start)].item<int64_t>();
      ++r.confusion[static_cast<size_t>(truth)][static_cast<size_t>(guess)];
      auto& ts = r.per_testset[manifest_index];
      ++ts.count;
      if (truth == guess) ++ts.correct;
    }
  }
  int64_t correct = 0;
  for (size_t k = 0; k < K; ++k) {
    int64_t row = 0;
    for (auto n : r.confusion[k]) row += n;
    r.per_class_accuracy.push_back(row ? static_cast<double>(r.confusion[k][k]) / row : 0.0);
    correct += r.confusion[k][k];
    r.total += row;
  }
  r.overall_accuracy = r.total ? static_cast<double>(correct) / r.total : 0.0;
  for (auto& ts : r.per_testset) {
    ts.accuracy = ts.count ? static_cast<double>(ts.correct) / ts.count : 0.0;
  }
  return r;
}

EvalReport evaluate(LoadedModel& model, const DatasetManifest& manifest, EvalMode mode,
                    Split split) {
  auto policy = model.eval_policy();
  return evaluate_networks(*model.generator, *model.head, manifest, split, policy,
                           model.meta.labels, model.meta.task, mode);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json doc;
  doc["mode"] = to_string(mode);
  doc["task"] = to_string(task);
  doc["classes"] = class_names;
  doc["confusion"] = confusion;
  doc["per_class_accuracy"] = per_class_accuracy;
  doc["overall_accuracy"] = overall_accuracy;
  doc["total"] = total;
  doc["per_testset"] = nlohmann::json::array();
  for (const auto& t : per_testset) {
    doc["per_testset"].push_back(
        {{"name", t.name}, {"count", t.count}, {"correct", t.correct}, {"accuracy", t.accuracy}});
  }
  return doc;
}

}  // namespace gfd
