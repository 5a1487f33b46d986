#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gfd/analysis.hpp"
#include "gfd/data_model.hpp"
#include "gfd/networks.hpp"
#include "gfd/train_config.hpp"

namespace gfd {

struct PatchSettings {
  std::optional<int64_t> resize_to;  // overrides the manifest/default rule
  int64_t crop = 224;
};

/// Everything a run needs. Defaults < config file < command-line overrides.
struct RunConfig {
  TrainConfig train;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  ClassifierConfig classifier;
  PerceptualConfig perceptual;
  GlcmConfig glcm;
  PatchSettings patch;
  std::string device = "cpu";

  void validate() const;
  nlohmann::json to_json() const;
  /// Starts from defaults; unknown sections or keys are rejected.
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// "section.key=value", value parsed as JSON when possible, else as a string.
  void apply_override(const std::string& assignment);

  /// Patch policy for a given native resolution.
  PatchPolicy patch_policy(int64_t native_resolution, std::optional<int64_t> manifest_resize,
                           CropMode mode) const;
};

}  // namespace gfd
