#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace gfd {

enum class Backbone { kUNet, kResNet50, kDenseNet121 };

std::string to_string(Backbone backbone);
Backbone backbone_from_string(const std::string& name);

struct GeneratorConfig {
  Backbone backbone = Backbone::kUNet;
  // U-Net: stem width. ResNet/DenseNet: stem width of the classifier recipe (64).
  int64_t base_channels = 64;
  // U-Net encoder stages. The ResNet/DenseNet encoders always downsample 32x.
  int64_t depth = 5;
  int64_t num_classes = 2;

  void validate() const;
  /// Spatial reduction between the input patch and the latent code.
  int64_t downsample_factor() const;
};

struct DiscriminatorConfig {
  int64_t base_channels = 64;
  bool instance_norm = true;

  void validate() const;
};

struct ClassifierConfig {
  // resnet10 | resnet18 | resnet34 | resnet50 | densenet121
  std::string arch = "resnet50";
  int64_t width = 64;
  int64_t num_classes = 2;

  void validate() const;
};

struct PerceptualConfig {
  int64_t base_channels = 64;
  // "seeded" builds frozen weights from `seed`; anything else is a weights
  // file, resolved against $GFD_CACHE when relative.
  std::string weights = "seeded";
  uint64_t seed = 0x5eed;

  void validate() const;
};

/// Encoder activations ordered shallow to deep. skips[l] sits at 1/2^l of the
/// input resolution; `latent` at 1/2^skips.size().
struct EncoderFeatures {
  std::vector<torch::Tensor> skips;
  torch::Tensor latent;
};

class EncoderImpl : public torch::nn::Module {
 public:
  virtual EncoderFeatures encode(const torch::Tensor& x) = 0;
  virtual std::vector<int64_t> skip_channels() const = 0;
  virtual int64_t latent_channels() const = 0;
  ~EncoderImpl() override = default;
};

class UNetEncoderImpl : public EncoderImpl {
 public:
  UNetEncoderImpl(int64_t base_channels, int64_t depth);
  EncoderFeatures encode(const torch::Tensor& x) override;
  std::vector<int64_t> skip_channels() const override { return channels_; }
  int64_t latent_channels() const override { return latent_channels_; }

 private:
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
  std::vector<int64_t> channels_;
  int64_t latent_channels_ = 0;
};

/// torchvision-layout ResNet trunk (conv1 .. layer4), without the fc.
class ResNetTrunkImpl : public EncoderImpl {
 public:
  ResNetTrunkImpl(const std::string& arch, int64_t width);
  EncoderFeatures encode(const torch::Tensor& x) override;
  std::vector<int64_t> skip_channels() const override { return skip_channels_; }
  int64_t latent_channels() const override { return latent_channels_; }

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  std::vector<torch::nn::Sequential> layers_;
  std::vector<int64_t> skip_channels_;
  int64_t latent_channels_ = 0;
};

/// torchvision-layout DenseNet-121 feature stack (conv0 .. norm5).
class DenseNetFeaturesImpl : public EncoderImpl {
 public:
  explicit DenseNetFeaturesImpl(int64_t width);
  EncoderFeatures encode(const torch::Tensor& x) override;
  std::vector<int64_t> skip_channels() const override { return skip_channels_; }
  int64_t latent_channels() const override { return latent_channels_; }

 private:
  torch::nn::Conv2d conv0_{nullptr};
  torch::nn::BatchNorm2d norm0_{nullptr};
  std::vector<torch::nn::Sequential> blocks_;
  std::vector<torch::nn::Sequential> transitions_;
  torch::nn::BatchNorm2d norm5_{nullptr};
  std::vector<int64_t> skip_channels_;
  int64_t latent_channels_ = 0;
};

/// Upsamples the latent back to input resolution, one resize-conv stage per
/// skip level. The last layer is linear so residuals stay unbounded.
class SkipDecoderImpl : public torch::nn::Module {
 public:
  SkipDecoderImpl(std::vector<int64_t> skip_channels, int64_t latent_channels,
                  std::vector<int64_t> decoder_channels);
  torch::Tensor forward(const EncoderFeatures& features);

 private:
  struct Stage {
    torch::nn::Conv2d up{nullptr};
    torch::nn::Conv2d fuse{nullptr};
  };
  std::vector<Stage> stages_;  // indexed by level
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(SkipDecoder);

struct GeneratorOutput {
  torch::Tensor fingerprint;  // [B, 3, H, W]
  torch::Tensor latent;       // [B, C_z, H / f, W / f]
};

/// Fingerprint extractor G: encoder + skip decoder. The classification head
/// lives in its own module (ClassificationHead).
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);

  GeneratorOutput forward(const torch::Tensor& x);
  /// Encoder only; the detection/attribution inference path.
  torch::Tensor encode(const torch::Tensor& x);

  const GeneratorConfig& config() const { return config_; }
  int64_t latent_channels() const { return encoder_->latent_channels(); }
  EncoderImpl& encoder() { return *encoder_; }

 private:
  void check_input(const torch::Tensor& x) const;

  GeneratorConfig config_;
  std::shared_ptr<EncoderImpl> encoder_;
  SkipDecoder decoder_{nullptr};
};
TORCH_MODULE(Generator);

/// H: global average pool + linear.
class ClassificationHeadImpl : public torch::nn::Module {
 public:
  ClassificationHeadImpl(int64_t in_channels, int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& latent);

  torch::nn::Linear& fc() { return fc_; }
  int64_t in_channels() const { return in_channels_; }

 private:
  int64_t in_channels_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(ClassificationHead);

/// 3-layer PatchGAN; returns pre-sigmoid scores [B, 1, H/8, W/8].
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorConfig& config);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv2d score_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// Auxiliary source classifier C (ResNet or DenseNet recipe).
class SourceClassifierImpl : public torch::nn::Module {
 public:
  explicit SourceClassifierImpl(const ClassifierConfig& config);
  torch::Tensor forward(const torch::Tensor& x);

  const ClassifierConfig& config() const { return config_; }

 private:
  ClassifierConfig config_;
  std::shared_ptr<EncoderImpl> trunk_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(SourceClassifier);

/// Frozen VGG-16 feature stack tapped before the first four pools.
class PerceptualExtractorImpl : public torch::nn::Module {
 public:
  explicit PerceptualExtractorImpl(const PerceptualConfig& config);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);

  static constexpr int kNumTaps = 4;

 private:
  torch::nn::Sequential features_{nullptr};
  std::vector<int64_t> tap_indices_;
  torch::Tensor mean_, std_;
};
TORCH_MODULE(PerceptualExtractor);

/// Label, confidence and probabilities for one row of logits.
struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  int64_t label = 0;
  double confidence = 0.0;
};

Prediction make_prediction(const torch::Tensor& logits);

struct ParameterShape {
  std::string name;
  std::vector<int64_t> shape;
  bool operator==(const ParameterShape&) const = default;
};

std::vector<ParameterShape> parameter_manifest(const torch::nn::Module& module,
                                               const std::string& prefix = "");
int64_t parameter_count(const torch::nn::Module& module);

/// Parameter-shape manifest of the detection/attribution inference path
/// (G's encoder + H), renamed to torchvision's layout for the backbone.
std::vector<ParameterShape> inference_path_manifest(GeneratorImpl& generator,
                                                    ClassificationHeadImpl& head);
/// Same layout for a standalone classifier of the given recipe.
std::vector<ParameterShape> classifier_manifest(SourceClassifierImpl& classifier);

void set_requires_grad(torch::nn::Module& module, bool value);

/// Default CPU generator state (uint8 tensor) and its inverse.
torch::Tensor cpu_rng_state();
void set_cpu_rng_state(const torch::Tensor& state);

/// Resolves a perceptual weights reference against $GFD_CACHE.
std::filesystem::path resolve_weights_path(const std::string& reference);

}  // namespace gfd
