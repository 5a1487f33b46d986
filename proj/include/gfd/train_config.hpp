#pragma once

#include <cstdint>
#include <string>

#include "gfd/losses.hpp"

namespace gfd {

enum class Task { kAttribution, kDetection };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct TrainConfig {
  double lr = 1e-4;
  double gamma = 0.9;
  int64_t step_size = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t batch_size = 16;
  int64_t max_iters = 10000;
  int64_t pretrain_c_iters = 1000;
  int64_t checkpoint_every = 500;
  int64_t val_every = 500;
  uint64_t seed = 0;
  Task task = Task::kAttribution;
  LossWeights weights = LossWeights::attribution_defaults();

  void validate() const;
};

/// Step decay: lr * gamma^floor(iteration / step_size).
double learning_rate_at(const TrainConfig& config, int64_t iteration);

}  // namespace gfd
