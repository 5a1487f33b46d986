#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gfd/checkpoint.hpp"
#include "gfd/config.hpp"
#include "gfd/data_model.hpp"
#include "gfd/losses.hpp"
#include "gfd/networks.hpp"

namespace gfd {

struct Batch {
  torch::Tensor images;  // [B, 3, H, W]
  torch::Tensor labels;  // [B] int64, training taxonomy
};

/// Class-balanced random patches from one manifest split. Slot i of a batch
/// draws from manifest class i mod K, so the real class is always present.
class PatchSampler {
 public:
  PatchSampler(const DatasetManifest& manifest, Split split, PatchPolicy policy,
               std::vector<int64_t> label_map);

  Batch next(int64_t batch_size, Rng& rng);

 private:
  const ImageTensor& image(const std::filesystem::path& path);

  std::vector<std::vector<std::filesystem::path>> files_;  // per manifest class
  std::vector<int64_t> label_map_;
  PatchPolicy policy_;
  std::map<std::filesystem::path, ImageTensor> cache_;
};

/// Training taxonomy for a manifest: its own labels for attribution,
/// {real, fake} for detection.
std::vector<SourceLabel> training_labels(const DatasetManifest& manifest, Task task);

struct StepReport {
  int64_t iteration = 0;
  double lr = 0.0;
  GeneratorLossReport generator;
  CriticLossReport critic;
};

struct Networks {
  Generator generator{nullptr};
  ClassificationHead head{nullptr};
  PatchDiscriminator discriminator{nullptr};
  SourceClassifier classifier{nullptr};
  PerceptualExtractor perceptual{nullptr};  // null when the term is disabled
};

/// Owns the four trainable networks, their optimizers and the sampling RNG.
/// Each train_step runs the generator phase then the discriminator/classifier
/// phase on the same batch.
class Trainer {
 public:
  Trainer(RunConfig config, std::vector<SourceLabel> labels);

  enum class Phase { kGenerator, kCritic };
  /// Called after each phase's optimizer step (test instrumentation).
  void set_phase_hook(std::function<void(Phase)> hook) { phase_hook_ = std::move(hook); }

  StepReport train_step(const Batch& batch);
  /// One classifier-only update on the input images.
  double pretrain_classifier_step(const Batch& batch);

  Networks& networks() { return nets_; }
  const RunConfig& config() const { return config_; }
  const std::vector<SourceLabel>& labels() const { return labels_; }
  Rng& rng() { return rng_; }

  int64_t iteration() const { return iteration_; }
  void set_iteration(int64_t iteration) { iteration_ = iteration; }
  /// Learning rate the optimizers currently hold.
  double optimizer_lr() const;

  bool classifier_pretrained() const { return classifier_pretrained_; }
  void mark_classifier_pretrained() { classifier_pretrained_ = true; }
  double best_val_accuracy() const { return best_val_; }
  void set_best_val_accuracy(double v) { best_val_ = v; }

  /// Full training state: networks, optimizers, counters, RNG streams.
  void save(const std::filesystem::path& dir, const PatchPolicy& eval_policy) const;
  void restore(const std::filesystem::path& dir);

 private:
  void apply_lr(double lr);
  torch::Tensor sample_carriers(const torch::Tensor& labels);

  RunConfig config_;
  std::vector<SourceLabel> labels_;
  int64_t real_index_ = 0;
  torch::Device device_;
  Networks nets_;
  std::unique_ptr<torch::optim::Adam> opt_gh_, opt_d_, opt_c_;
  Rng rng_;
  int64_t iteration_ = 0;
  double best_val_ = -1.0;
  bool classifier_pretrained_ = false;
  std::function<void(Phase)> phase_hook_;
};

/// Appends one JSON object per line.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path, bool append = false);
  void write(const nlohmann::json& record);
  void step(const StepReport& report);

 private:
  std::ofstream out_;
};

struct FitOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::function<void(const StepReport&)> on_step;
};

struct FitResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
  double best_val_accuracy = 0.0;
  int64_t iterations = 0;
};

/// Pretrains C (when the auxiliary term is on and C is fresh), then runs the
/// alternating loop, checkpointing every `checkpoint_every` iterations and on
/// each new best validation accuracy.
FitResult fit(const DatasetManifest& manifest, const RunConfig& config, const FitOptions& options);

/// C trained alone for `pretrain_c_iters`; returns the mean loss of the last
/// 10 steps (0 iterations: C untouched, returns 0).
double pretrain_classifier(Trainer& trainer, PatchSampler& sampler, MetricsLog* log = nullptr);

}  // namespace gfd
