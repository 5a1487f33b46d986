#include "gfd/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstdlib>

#include "gfd/checkpoint.hpp"
#include "gfd/error.hpp"

namespace gfd {
namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding,
                bool bias = true) {
  return nn::Conv2d(
      nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

nn::InstanceNorm2d instance_norm(int64_t channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(false));
}

nn::LeakyReLU leaky() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

// ---------------------------------------------------------------- ResNet blocks

class BasicBlockImpl : public nn::Module {
 public:
  static constexpr int64_t kExpansion = 1;

  BasicBlockImpl(int64_t inplanes, int64_t planes, int64_t stride) {
    conv1_ = register_module("conv1", conv(inplanes, planes, 3, stride, 1, false));
    bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, 1, 1, false));
    bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
    if (stride != 1 || inplanes != planes) {
      downsample_ = register_module(
          "downsample", nn::Sequential(conv(inplanes, planes, 1, stride, 0, false),
                                       nn::BatchNorm2d(planes)));
    }
  }

  torch::Tensor forward(torch::Tensor x) {
    auto identity = downsample_ ? downsample_->forward(x) : x;
    auto out = torch::relu(bn1_(conv1_(x)));
    out = bn2_(conv2_(out));
    return torch::relu(out + identity);
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(BasicBlock);

class BottleneckImpl : public nn::Module {
 public:
  static constexpr int64_t kExpansion = 4;

  BottleneckImpl(int64_t inplanes, int64_t planes, int64_t stride) {
    conv1_ = register_module("conv1", conv(inplanes, planes, 1, 1, 0, false));
    bn1_ = register_module("bn1", nn::BatchNorm2d(planes));
    conv2_ = register_module("conv2", conv(planes, planes, 3, stride, 1, false));
    bn2_ = register_module("bn2", nn::BatchNorm2d(planes));
    conv3_ = register_module("conv3", conv(planes, planes * kExpansion, 1, 1, 0, false));
    bn3_ = register_module("bn3", nn::BatchNorm2d(planes * kExpansion));
    if (stride != 1 || inplanes != planes * kExpansion) {
      downsample_ = register_module(
          "downsample", nn::Sequential(conv(inplanes, planes * kExpansion, 1, stride, 0, false),
                                       nn::BatchNorm2d(planes * kExpansion)));
    }
  }

  torch::Tensor forward(torch::Tensor x) {
    auto identity = downsample_ ? downsample_->forward(x) : x;
    auto out = torch::relu(bn1_(conv1_(x)));
    out = torch::relu(bn2_(conv2_(out)));
    out = bn3_(conv3_(out));
    return torch::relu(out + identity);
  }

 private:
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
  nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, bn3_{nullptr};
  nn::Sequential downsample_{nullptr};
};
TORCH_MODULE(Bottleneck);

struct ResNetRecipe {
  bool bottleneck;
  std::vector<int64_t> blocks;
};

ResNetRecipe resnet_recipe(const std::string& arch) {
  if (arch == "resnet10") return {false, {1, 1, 1, 1}};
  if (arch == "resnet18") return {false, {2, 2, 2, 2}};
  if (arch == "resnet34") return {false, {3, 4, 6, 3}};
  if (arch == "resnet50") return {true, {3, 4, 6, 3}};
  throw Error("bad_config", "unknown resnet recipe '" + arch + "'");
}

// ---------------------------------------------------------------- DenseNet blocks

class DenseLayerImpl : public nn::Module {
 public:
  DenseLayerImpl(int64_t in, int64_t growth, int64_t bn_size) {
    norm1_ = register_module("norm1", nn::BatchNorm2d(in));
    conv1_ = register_module("conv1", conv(in, bn_size * growth, 1, 1, 0, false));
    norm2_ = register_module("norm2", nn::BatchNorm2d(bn_size * growth));
    conv2_ = register_module("conv2", conv(bn_size * growth, growth, 3, 1, 1, false));
  }

  torch::Tensor forward(torch::Tensor x) {
    auto out = conv1_(torch::relu(norm1_(x)));
    out = conv2_(torch::relu(norm2_(out)));
    return torch::cat({x, out}, 1);
  }

 private:
  nn::BatchNorm2d norm1_{nullptr}, norm2_{nullptr};
  nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(DenseLayer);

std::string head_name_for(const std::string& arch) {
  return arch.rfind("densenet", 0) == 0 ? "classifier" : "fc";
}

std::string trunk_prefix_for(const std::string& arch) {
  return arch.rfind("densenet", 0) == 0 ? "features." : "";
}

std::string backbone_arch(Backbone b) {
  switch (b) {
    case Backbone::kResNet50: return "resnet50";
    case Backbone::kDenseNet121: return "densenet121";
    case Backbone::kUNet: return "unet";
  }
  return "unet";
}

void append_renamed(std::vector<ParameterShape>& out, const nn::Module& module,
                    const std::string& prefix) {
  for (const auto& p : module.named_parameters(/*recurse=*/true)) {
    const auto sizes = p.value().sizes();
    out.push_back({prefix + p.key(), std::vector<int64_t>(sizes.begin(), sizes.end())});
  }
}

}  // namespace

// ---------------------------------------------------------------- configs

std::string to_string(Backbone backbone) {
  switch (backbone) {
    case Backbone::kUNet: return "unet";
    case Backbone::kResNet50: return "resnet50-encoder";
    case Backbone::kDenseNet121: return "densenet-encoder";
  }
  return "unet";
}

Backbone backbone_from_string(const std::string& name) {
  if (name == "unet") return Backbone::kUNet;
  if (name == "resnet50-encoder") return Backbone::kResNet50;
  if (name == "densenet-encoder") return Backbone::kDenseNet121;
  throw Error("bad_config", "unknown generator backbone '" + name + "'");
}

void GeneratorConfig::validate() const {
  if (base_channels < 2) throw Error("bad_config", "generator.base_channels must be >= 2");
  if (backbone == Backbone::kUNet && depth < 2) {
    throw Error("bad_config", "generator.depth must be >= 2");
  }
  if (num_classes < 2) throw Error("bad_config", "generator needs at least 2 classes");
}

int64_t GeneratorConfig::downsample_factor() const {
  return backbone == Backbone::kUNet ? (int64_t{1} << depth) : 32;
}

void DiscriminatorConfig::validate() const {
  if (base_channels < 1) throw Error("bad_config", "discriminator.base_channels must be >= 1");
}

void ClassifierConfig::validate() const {
  if (arch != "densenet121") resnet_recipe(arch);
  if (width < 2) throw Error("bad_config", "classifier.width must be >= 2");
  if (num_classes < 2) throw Error("bad_config", "classifier needs at least 2 classes");
}

void PerceptualConfig::validate() const {
  if (base_channels < 1) throw Error("bad_config", "perceptual.base_channels must be >= 1");
  if (weights.empty()) throw Error("bad_config", "perceptual.weights must not be empty");
}

// ---------------------------------------------------------------- U-Net encoder

UNetEncoderImpl::UNetEncoderImpl(int64_t base_channels, int64_t depth) {
  stem_ = register_module("stem", nn::Sequential(conv(3, base_channels, 3, 1, 1),
                                                 instance_norm(base_channels), leaky()));
  channels_.push_back(base_channels);
  int64_t in = base_channels;
  for (int64_t i = 1; i <= depth; ++i) {
    const int64_t out = base_channels << (i - 1);
    nn::Sequential stage;
    // The innermost stage is left unnormalized: its activations feed the
    // pooled head and may be as small as 1x1.
    const bool innermost = i == depth;
    stage->push_back(conv(in, out, 4, 2, 1));
    if (!innermost) stage->push_back(instance_norm(out));
    stage->push_back(leaky());
    stage->push_back(conv(out, out, 3, 1, 1));
    if (!innermost) stage->push_back(instance_norm(out));
    stage->push_back(leaky());
    stages_.push_back(register_module("stage" + std::to_string(i), stage));
    if (!innermost) channels_.push_back(out);
    latent_channels_ = out;
    in = out;
  }
}

EncoderFeatures UNetEncoderImpl::encode(const torch::Tensor& x) {
  EncoderFeatures f;
  auto h = stem_->forward(x);
  for (size_t i = 0; i < stages_.size(); ++i) {
    f.skips.push_back(h);
    h = stages_[i]->forward(h);
  }
  f.latent = h;
  return f;
}

// ---------------------------------------------------------------- ResNet trunk

ResNetTrunkImpl::ResNetTrunkImpl(const std::string& arch, int64_t width) {
  const auto recipe = resnet_recipe(arch);
  const int64_t expansion = recipe.bottleneck ? BottleneckImpl::kExpansion : 1;
  conv1_ = register_module("conv1", conv(3, width, 7, 2, 3, false));
  bn1_ = register_module("bn1", nn::BatchNorm2d(width));
  skip_channels_ = {3, width};
  int64_t inplanes = width;
  for (size_t i = 0; i < recipe.blocks.size(); ++i) {
    const int64_t planes = width << i;
    nn::Sequential layer;
    for (int64_t b = 0; b < recipe.blocks[i]; ++b) {
      const int64_t stride = (b == 0 && i > 0) ? 2 : 1;
      if (recipe.bottleneck) {
        layer->push_back(Bottleneck(inplanes, planes, stride));
      } else {
        layer->push_back(BasicBlock(inplanes, planes, stride));
      }
      inplanes = planes * expansion;
    }
    layers_.push_back(register_module("layer" + std::to_string(i + 1), layer));
    if (i + 1 < recipe.blocks.size()) skip_channels_.push_back(inplanes);
  }
  latent_channels_ = inplanes;
}

EncoderFeatures ResNetTrunkImpl::encode(const torch::Tensor& x) {
  EncoderFeatures f;
  f.skips.push_back(x);
  auto h = torch::relu(bn1_(conv1_(x)));
  f.skips.push_back(h);
  h = F::max_pool2d(h, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h);
    if (i + 1 < layers_.size()) f.skips.push_back(h);
  }
  f.latent = h;
  return f;
}

// ---------------------------------------------------------------- DenseNet trunk

DenseNetFeaturesImpl::DenseNetFeaturesImpl(int64_t width) {
  const int64_t growth = width / 2;
  const int64_t bn_size = 4;
  const std::vector<int64_t> block_config = {6, 12, 24, 16};
  conv0_ = register_module("conv0", conv(3, width, 7, 2, 3, false));
  norm0_ = register_module("norm0", nn::BatchNorm2d(width));
  skip_channels_ = {3, width};
  int64_t features = width;
  for (size_t i = 0; i < block_config.size(); ++i) {
    nn::Sequential block;
    for (int64_t l = 0; l < block_config[i]; ++l) {
      block->push_back("denselayer" + std::to_string(l + 1),
                       DenseLayer(features + l * growth, growth, bn_size));
    }
    features += block_config[i] * growth;
    blocks_.push_back(register_module("denseblock" + std::to_string(i + 1), block));
    if (i + 1 < block_config.size()) {
      skip_channels_.push_back(features);
      nn::Sequential transition;
      transition->push_back("norm", nn::BatchNorm2d(features));
      transition->push_back("relu", nn::ReLU());
      transition->push_back("conv", conv(features, features / 2, 1, 1, 0, false));
      transition->push_back("pool", nn::AvgPool2d(nn::AvgPool2dOptions(2).stride(2)));
      transitions_.push_back(register_module("transition" + std::to_string(i + 1), transition));
      features /= 2;
    }
  }
  norm5_ = register_module("norm5", nn::BatchNorm2d(features));
  latent_channels_ = features;
}

EncoderFeatures DenseNetFeaturesImpl::encode(const torch::Tensor& x) {
  EncoderFeatures f;
  f.skips.push_back(x);
  auto h = torch::relu(norm0_(conv0_(x)));
  f.skips.push_back(h);
  h = F::max_pool2d(h, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  for (size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i]->forward(h);
    if (i < transitions_.size()) {
      f.skips.push_back(h);
      h = transitions_[i]->forward(h);
    }
  }
  f.latent = torch::relu(norm5_(h));
  return f;
}

// ---------------------------------------------------------------- decoder

SkipDecoderImpl::SkipDecoderImpl(std::vector<int64_t> skip_channels, int64_t latent_channels,
                                 std::vector<int64_t> decoder_channels) {
  const size_t levels = skip_channels.size();
  stages_.resize(levels);
  int64_t in = latent_channels;
  for (size_t k = levels; k-- > 0;) {
    const int64_t out = decoder_channels[k];
    const auto tag = std::to_string(k);
    stages_[k].up = register_module("up" + tag, conv(in, out, 3, 1, 1));
    stages_[k].fuse = register_module("fuse" + tag, conv(out + skip_channels[k], out, 3, 1, 1));
    in = out;
  }
  out_ = register_module("out", conv(in, 3, 1, 1, 0));
}

torch::Tensor SkipDecoderImpl::forward(const EncoderFeatures& features) {
  auto h = features.latent;
  for (size_t k = stages_.size(); k-- > 0;) {
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    h = torch::relu(F::instance_norm(stages_[k].up(h)));
    h = torch::cat({h, features.skips[k]}, 1);
    h = torch::relu(F::instance_norm(stages_[k].fuse(h)));
  }
  return out_(h);
}

// ---------------------------------------------------------------- generator

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  std::vector<int64_t> decoder_channels;
  switch (config_.backbone) {
    case Backbone::kUNet: {
      auto enc = std::make_shared<UNetEncoderImpl>(config_.base_channels, config_.depth);
      decoder_channels = enc->skip_channels();
      encoder_ = register_module("encoder", enc);
      break;
    }
    case Backbone::kResNet50:
      encoder_ = register_module(
          "encoder", std::make_shared<ResNetTrunkImpl>("resnet50", config_.base_channels));
      break;
    case Backbone::kDenseNet121:
      encoder_ = register_module(
          "encoder", std::make_shared<DenseNetFeaturesImpl>(config_.base_channels));
      break;
  }
  if (decoder_channels.empty()) {
    for (size_t l = 0; l < encoder_->skip_channels().size(); ++l) {
      decoder_channels.push_back(std::max<int64_t>(8, config_.base_channels / 2) << l);
    }
  }
  decoder_ = register_module(
      "decoder", SkipDecoder(encoder_->skip_channels(), encoder_->latent_channels(),
                             decoder_channels));
}

void GeneratorImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != 3) {
    throw Error("bad_shape", "generator expects a [B, 3, H, W] batch");
  }
  const int64_t f = config_.downsample_factor();
  if (x.size(2) % f != 0 || x.size(3) % f != 0) {
    throw Error("bad_shape", "patch " + std::to_string(x.size(2)) + "x" +
                                 std::to_string(x.size(3)) + " is not divisible by " +
                                 std::to_string(f));
  }
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& x) {
  check_input(x);
  auto features = encoder_->encode(x);
  auto latent = features.latent;
  return {decoder_->forward(features), latent};
}

torch::Tensor GeneratorImpl::encode(const torch::Tensor& x) {
  check_input(x);
  return encoder_->encode(x).latent;
}

// ---------------------------------------------------------------- head

ClassificationHeadImpl::ClassificationHeadImpl(int64_t in_channels, int64_t num_classes)
    : in_channels_(in_channels) {
  fc_ = register_module("fc", nn::Linear(in_channels, num_classes));
}

torch::Tensor ClassificationHeadImpl::forward(const torch::Tensor& latent) {
  if (latent.dim() != 4 || latent.size(1) != in_channels_) {
    throw Error("channel_mismatch", "head expects " + std::to_string(in_channels_) +
                                        " latent channels");
  }
  return fc_(latent.mean({2, 3}));
}

// ---------------------------------------------------------------- discriminator

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorConfig& config) {
  config.validate();
  const int64_t b = config.base_channels;
  nn::Sequential body;
  body->push_back(conv(3, b, 4, 2, 1));
  body->push_back(leaky());
  body->push_back(conv(b, 2 * b, 4, 2, 1));
  if (config.instance_norm) body->push_back(instance_norm(2 * b));
  body->push_back(leaky());
  body->push_back(conv(2 * b, 4 * b, 4, 2, 1));
  if (config.instance_norm) body->push_back(instance_norm(4 * b));
  body->push_back(leaky());
  body_ = register_module("body", body);
  score_ = register_module("score", conv(4 * b, 1, 3, 1, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  return score_(body_->forward(x));
}

// ---------------------------------------------------------------- classifier

SourceClassifierImpl::SourceClassifierImpl(const ClassifierConfig& config) : config_(config) {
  config_.validate();
  if (config_.arch == "densenet121") {
    trunk_ = register_module("trunk", std::make_shared<DenseNetFeaturesImpl>(config_.width));
  } else {
    trunk_ = register_module("trunk", std::make_shared<ResNetTrunkImpl>(config_.arch,
                                                                         config_.width));
  }
  fc_ = register_module("fc", nn::Linear(trunk_->latent_channels(), config_.num_classes));
}

torch::Tensor SourceClassifierImpl::forward(const torch::Tensor& x) {
  return fc_(trunk_->encode(x).latent.mean({2, 3}));
}

// ---------------------------------------------------------------- perceptual

PerceptualExtractorImpl::PerceptualExtractorImpl(const PerceptualConfig& config) {
  config.validate();
  const int64_t b = config.base_channels;
  // conv widths of VGG-16 blocks 1-4; 'M' (0) marks a pool.
  const std::vector<int64_t> plan = {b, b, 0, 2 * b, 2 * b, 0, 4 * b, 4 * b, 4 * b, 0,
                                     8 * b, 8 * b, 8 * b};
  const bool seeded = config.weights == "seeded";
  std::optional<torch::Tensor> saved_rng;
  if (seeded) {
    saved_rng = cpu_rng_state();
    torch::manual_seed(config.seed);
  }
  nn::Sequential features;
  int64_t in = 3;
  for (size_t i = 0; i < plan.size(); ++i) {
    if (plan[i] == 0) {
      tap_indices_.push_back(static_cast<int64_t>(features->size()) - 1);
      features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
      continue;
    }
    features->push_back(conv(in, plan[i], 3, 1, 1));
    features->push_back(nn::ReLU());
    in = plan[i];
  }
  tap_indices_.push_back(static_cast<int64_t>(features->size()) - 1);
  features_ = register_module("features", features);
  if (saved_rng) set_cpu_rng_state(*saved_rng);

  if (!seeded) {
    const auto path = resolve_weights_path(config.weights);
    if (!std::filesystem::exists(path)) {
      throw Error("weights_missing", "perceptual weights file missing: " + path.string());
    }
    load_parameters(*this, read_tensor_dict(path), /*strict=*/false);
  }
  mean_ = register_buffer("mean", torch::tensor({0.485, 0.456, 0.406}).view({1, 3, 1, 1}));
  std_ = register_buffer("std", torch::tensor({0.229, 0.224, 0.225}).view({1, 3, 1, 1}));
  set_requires_grad(*this, false);
  eval();
}

std::vector<torch::Tensor> PerceptualExtractorImpl::forward(const torch::Tensor& x) {
  auto h = ((x + 1.0) * 0.5 - mean_.to(x.dtype())) / std_.to(x.dtype());
  std::vector<torch::Tensor> taps;
  size_t next = 0;
  int64_t i = 0;
  for (auto& layer : *features_) {
    h = layer.forward(h);
    if (next < tap_indices_.size() && i == tap_indices_[next]) {
      taps.push_back(h);
      ++next;
    }
    ++i;
  }
  return taps;
}

// ---------------------------------------------------------------- utilities

Prediction make_prediction(const torch::Tensor& logits) {
  auto l = logits.detach().to(torch::kCPU, torch::kFloat64).flatten();
  if (l.numel() < 1) throw Error("bad_shape", "empty logits");
  auto probs = torch::softmax(l, 0);
  Prediction p;
  p.logits.assign(l.data_ptr<double>(), l.data_ptr<double>() + l.numel());
  p.probabilities.assign(probs.data_ptr<double>(), probs.data_ptr<double>() + probs.numel());
  p.label = l.argmax().item<int64_t>();
  p.confidence = p.probabilities[static_cast<size_t>(p.label)];
  return p;
}

std::vector<ParameterShape> parameter_manifest(const nn::Module& module,
                                               const std::string& prefix) {
  std::vector<ParameterShape> out;
  append_renamed(out, module, prefix);
  return out;
}

int64_t parameter_count(const nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::vector<ParameterShape> inference_path_manifest(GeneratorImpl& generator,
                                                    ClassificationHeadImpl& head) {
  const auto arch = backbone_arch(generator.config().backbone);
  std::vector<ParameterShape> out;
  append_renamed(out, generator.encoder(), trunk_prefix_for(arch));
  for (const auto& p : head.fc()->named_parameters()) {
    const auto sizes = p.value().sizes();
    out.push_back({head_name_for(arch) + "." + p.key(),
                   std::vector<int64_t>(sizes.begin(), sizes.end())});
  }
  return out;
}

std::vector<ParameterShape> classifier_manifest(SourceClassifierImpl& classifier) {
  const auto& arch = classifier.config().arch;
  std::vector<ParameterShape> out;
  for (const auto& p : classifier.named_parameters()) {
    std::string name = p.key();
    if (name.rfind("trunk.", 0) == 0) {
      name = trunk_prefix_for(arch) + name.substr(6);
    } else if (name.rfind("fc.", 0) == 0) {
      name = head_name_for(arch) + name.substr(2);
    }
    const auto sizes = p.value().sizes();
    out.push_back({name, std::vector<int64_t>(sizes.begin(), sizes.end())});
  }
  return out;
}

torch::Tensor cpu_rng_state() {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  return gen.get_state();
}

void set_cpu_rng_state(const torch::Tensor& state) {
  auto gen = at::detail::getDefaultCPUGenerator();
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(state);
}

void set_requires_grad(nn::Module& module, bool value) {
  for (auto& p : module.parameters()) p.set_requires_grad(value);
}

std::filesystem::path resolve_weights_path(const std::string& reference) {
  std::filesystem::path p = reference;
  if (p.is_absolute()) return p;
  if (const char* cache = std::getenv("GFD_CACHE"); cache && *cache) {
    return std::filesystem::path(cache) / p;
  }
  return p;
}

}  // namespace gfd
