#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "gfd/data_model.hpp"
#include "gfd/networks.hpp"
#include "gfd/train_config.hpp"

namespace gfd {

using TensorDict = std::map<std::string, torch::Tensor>;

/// Parameters and buffers by dotted name.
TensorDict state_dict(const torch::nn::Module& module);
/// Every parameter/buffer of `module` must be present with a matching shape.
/// Extra entries are an error unless `allow_extra` is set.
void load_state_dict(torch::nn::Module& module, const TensorDict& dict, bool allow_extra = false);
/// As load_state_dict but only parameters are required (buffers optional).
void load_parameters(torch::nn::Module& module, const TensorDict& dict, bool strict);

/// Pickle-format blob; `torch.load` in Python reads it back as a dict.
void write_tensor_dict(const std::filesystem::path& path, const TensorDict& dict);
TensorDict read_tensor_dict(const std::filesystem::path& path);

/// FNV-1a 64 over names, shapes and raw bytes; hex string.
std::string tensor_dict_hash(const TensorDict& dict);

inline constexpr const char* kCheckpointFormat = "gfd-checkpoint/1";

struct CheckpointMeta {
  int64_t iteration = 0;
  double best_val_accuracy = -1.0;
  bool classifier_pretrained = false;
  Task task = Task::kAttribution;
  std::vector<SourceLabel> labels;
  // eval-time patch policy of the training data
  std::optional<int64_t> resize_to;
  int64_t crop = 224;
  // per network: blob file, hash, parameter shapes
  nlohmann::json networks = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointMeta from_json(const nlohmann::json& doc);
};

/// Writes `<dir>/<name>.pt` and records it in meta.networks.
void save_network(const std::filesystem::path& dir, const std::string& name,
                  const torch::nn::Module& module, CheckpointMeta& meta);
/// Loads `<dir>/<name>.pt` after checking the recorded hash.
void load_network(const std::filesystem::path& dir, const std::string& name,
                  torch::nn::Module& module, const CheckpointMeta& meta);

void write_meta(const std::filesystem::path& dir, const CheckpointMeta& meta);
CheckpointMeta read_meta(const std::filesystem::path& dir);

}  // namespace gfd
