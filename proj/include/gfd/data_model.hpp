#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace gfd {

/// One entry of the label taxonomy {real, GAN_1 .. GAN_N}.
struct SourceLabel {
  int64_t index = 0;
  std::string name;
  bool is_real = false;

  bool operator==(const SourceLabel&) const = default;
};

/// RGB pixels as a float tensor [3, H, W] in [-1, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(torch::Tensor pixels);

  const torch::Tensor& pixels() const { return pixels_; }
  int64_t height() const { return pixels_.size(1); }
  int64_t width() const { return pixels_.size(2); }

 private:
  torch::Tensor pixels_;
};

/// Signed residual map [3, H, W]; unbounded.
class Fingerprint {
 public:
  Fingerprint() = default;
  explicit Fingerprint(torch::Tensor residual);

  const torch::Tensor& residual() const { return residual_; }
  int64_t height() const { return residual_.size(1); }
  int64_t width() const { return residual_.size(2); }

 private:
  torch::Tensor residual_;
};

struct LabeledImage {
  ImageTensor image;
  SourceLabel label;
};

/// A real carrier image with a fingerprint planted on it.
struct FingerprintedImage {
  ImageTensor image;
  SourceLabel origin_label;
  ImageTensor carrier;
};

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct ManifestClass {
  SourceLabel label;
  // Resolved, sorted file lists. A split missing from the manifest is empty.
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> val;
  std::vector<std::filesystem::path> test;

  const std::vector<std::filesystem::path>& files(Split split) const;
  std::vector<std::filesystem::path>& files(Split split);
};

struct ManifestSample {
  std::filesystem::path path;
  SourceLabel label;
};

struct DatasetManifest {
  std::filesystem::path source;
  int64_t native_resolution = 0;
  std::optional<int64_t> resize_to;
  std::vector<ManifestClass> classes;  // classes[i].label.index == i, real first

  int64_t num_classes() const { return static_cast<int64_t>(classes.size()); }
  std::vector<SourceLabel> labels() const;
  std::vector<std::string> class_names() const;
  const SourceLabel& real_label() const;
  const SourceLabel& label_by_name(const std::string& name) const;
  std::vector<ManifestSample> samples(Split split) const;
};

struct ManifestOptions {
  bool require_real = true;
};

/// Parses a JSON manifest; globs are resolved relative to the manifest's
/// directory. Real is reindexed to 0, the rest keep file order.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const ManifestOptions& options = {});
DatasetManifest parse_manifest(const std::string& text,
                               const std::filesystem::path& base_dir,
                               const ManifestOptions& options = {});

enum class CropMode { kTrain, kEval };

struct PatchPolicy {
  std::optional<int64_t> resize_to;  // unset: identity
  int64_t crop = 224;
  CropMode mode = CropMode::kEval;

  /// 512 for 128px sources, identity otherwise.
  static PatchPolicy defaults_for(int64_t native_resolution, CropMode mode,
                                  int64_t crop = 224);
};

struct CropOffset {
  int64_t row = 0;
  int64_t col = 0;
  bool operator==(const CropOffset&) const = default;
};

using Rng = std::mt19937_64;

/// Resizes (bilinear) when the policy asks for it, then crops crop x crop.
/// Train mode draws the offset uniformly, eval mode centers it.
ImageTensor prepare_patch(const ImageTensor& image, const PatchPolicy& policy,
                          Rng& rng, CropOffset* offset_out = nullptr);

/// Offset prepare_patch would take in eval mode for an image of this size.
CropOffset center_offset(int64_t height, int64_t width, int64_t crop);

ImageTensor resize_bilinear(const ImageTensor& image, int64_t height,
                            int64_t width);

/// carrier + residual, clamped to [-1, 1].
FingerprintedImage composite(const Fingerprint& fp, const ImageTensor& carrier,
                             const SourceLabel& origin);

/// Batched form used by training: images [B,3,H,W].
torch::Tensor composite_batch(const torch::Tensor& residuals,
                              const torch::Tensor& carriers);

/// uint8-range values -> [-1, 1].
torch::Tensor normalize_pixels(const torch::Tensor& bytes);
/// [-1, 1] -> uint8 with rounding and clamping.
torch::Tensor denormalize_pixels(const torch::Tensor& pixels);

}  // namespace gfd
