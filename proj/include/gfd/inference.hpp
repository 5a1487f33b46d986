#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gfd/checkpoint.hpp"
#include "gfd/config.hpp"
#include "gfd/data_model.hpp"
#include "gfd/networks.hpp"

namespace gfd {

/// G and H restored from a checkpoint directory, ready for eval-mode use.
struct LoadedModel {
  RunConfig config;
  CheckpointMeta meta;
  Generator generator{nullptr};
  ClassificationHead head{nullptr};

  PatchPolicy eval_policy() const;
  int64_t num_classes() const { return static_cast<int64_t>(meta.labels.size()); }
  int64_t real_index() const;
};

LoadedModel load_model(const std::filesystem::path& checkpoint_dir);

/// Head logits [B, K] for a batch of patches, eval mode, no autograd.
torch::Tensor inference_logits(GeneratorImpl& generator, ClassificationHeadImpl& head,
                               const torch::Tensor& patches);

/// Center-cropped patch per the model's eval policy.
ImageTensor eval_patch(const LoadedModel& model, const ImageTensor& image);

Prediction attribute(LoadedModel& model, const ImageTensor& image);

struct Detection {
  bool is_fake = false;
  double score = 0.0;  // probability mass off the real class
};

Detection detect(LoadedModel& model, const ImageTensor& image);
std::vector<Detection> detect_batch(LoadedModel& model, const std::vector<ImageTensor>& images);

/// G's decoder output on the center-cropped patch, eval mode.
Fingerprint extract_fingerprint(LoadedModel& model, const ImageTensor& image);

enum class EvalMode { kClosed, kOpen };
std::string to_string(EvalMode mode);
EvalMode eval_mode_from_string(const std::string& name);

struct TestsetAccuracy {
  std::string name;
  int64_t count = 0;
  int64_t correct = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  EvalMode mode = EvalMode::kClosed;
  Task task = Task::kAttribution;
  std::vector<std::string> class_names;
  std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
  std::vector<double> per_class_accuracy;
  double overall_accuracy = 0.0;
  int64_t total = 0;
  std::vector<TestsetAccuracy> per_testset;  // one per manifest class

  nlohmann::json to_json() const;
};

/// Scores every file of `split` with one center crop each. Manifest classes
/// are mapped onto the model's labels by name (attribution) or by is_real
/// (detection); a mismatch is "taxonomy_mismatch".
EvalReport evaluate_networks(GeneratorImpl& generator, ClassificationHeadImpl& head,
                             const DatasetManifest& manifest, Split split,
                             const PatchPolicy& policy, const std::vector<SourceLabel>& labels,
                             Task task, EvalMode mode, int64_t chunk = 32);

EvalReport evaluate(LoadedModel& model, const DatasetManifest& manifest, EvalMode mode,
                    Split split = Split::kTest);

/// manifest class index -> model label index.
std::vector<int64_t> label_mapping(const DatasetManifest& manifest,
                                   const std::vector<SourceLabel>& labels, Task task);

}  // namespace gfd
