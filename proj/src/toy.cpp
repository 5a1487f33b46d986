#include "gfd/toy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "gfd/error.hpp"
#include "gfd/image_io.hpp"

namespace gfd {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

}  // namespace

torch::Tensor toy_pattern(int source, int64_t size, double amplitude) {
  if (source < 1) throw Error("bad_source", "toy sources are numbered from 1");
  auto r = torch::arange(size, torch::kFloat64).view({size, 1});
  auto c = torch::arange(size, torch::kFloat64).view({1, size});
  torch::Tensor plane;
  // Distinct period and orientation per source; beyond four they repeat with a
  // longer period.
  const int k = (source - 1) % 4;
  const double stretch = 1.0 + static_cast<double>((source - 1) / 4);
  switch (k) {
    case 0: plane = torch::cos(kTwoPi * c / (4.0 * stretch)) + 0 * r; break;
    case 1: plane = torch::cos(kTwoPi * (r + c) / (6.0 * stretch)); break;
    case 2: plane = torch::cos(kTwoPi * r / (5.0 * stretch)) + 0 * c; break;
    default: plane = torch::cos(kTwoPi * (r - c) / (8.0 * stretch)); break;
  }
  return (amplitude * plane).unsqueeze(0).expand({3, size, size}).to(torch::kFloat32).contiguous();
}

torch::Tensor toy_content(int64_t index, int64_t size, uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto r = torch::arange(size, torch::kFloat64).view({size, 1}) / static_cast<double>(size);
  auto c = torch::arange(size, torch::kFloat64).view({1, size}) / static_cast<double>(size);
  std::vector<torch::Tensor> channels;
  for (int ch = 0; ch < 3; ++ch) {
    auto img = torch::full({size, size}, unit(rng) - 0.5, torch::kFloat64);
    for (int wave = 0; wave < 3; ++wave) {
      const double fr = 2.0 * unit(rng) - 1.0;
      const double fc = 2.0 * unit(rng) - 1.0;
      const double phase = kTwoPi * unit(rng);
      img = img + 0.3 * unit(rng) * torch::cos(kTwoPi * (fr * r + fc * c) + phase);
    }
    channels.push_back(img);
  }
  auto out = torch::stack(channels);
  return torch::clamp(out, -0.8, 0.8).to(torch::kFloat32);
}

std::vector<std::string> toy_source_names(int num_fake_sources) {
  std::vector<std::string> names = {"real"};
  for (int k = 1; k <= num_fake_sources; ++k) names.push_back("fake" + std::to_string(k));
  return names;
}

std::filesystem::path write_toy_dataset(const std::filesystem::path& dir,
                                        const ToyDatasetOptions& o) {
  if (o.pool_size < 10 || o.num_fake_sources < 1 || o.native_resolution < 8) {
    throw Error("bad_config", "toy dataset needs >= 10 images, >= 1 fake source, size >= 8");
  }
  std::vector<int64_t> order(static_cast<size_t>(o.pool_size));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(o.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<size_t>(std::llround(o.train_fraction * o.pool_size));
  const auto n_val = static_cast<size_t>(std::llround(o.val_fraction * o.pool_size));
  auto split_of = [&](size_t pos) {
    if (pos < n_train) return Split::kTrain;
    if (pos < n_train + n_val) return Split::kVal;
    return Split::kTest;
  };

  const auto names = toy_source_names(o.num_fake_sources);
  std::vector<torch::Tensor> patterns = {torch::zeros({3, o.native_resolution, o.native_resolution})};
  for (int k = 1; k <= o.num_fake_sources; ++k) {
    patterns.push_back(toy_pattern(k, o.native_resolution, o.amplitude));
  }

  nlohmann::json classes = nlohmann::json::array();
  for (size_t s = 0; s < names.size(); ++s) {
    nlohmann::json entry = {{"name", names[s]}, {"is_real", s == 0}};
    for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
      std::filesystem::create_directories(dir / names[s] / to_string(split));
      entry[to_string(split)] = {names[s] + "/" + to_string(split) + "/*.png"};
    }
    classes.push_back(entry);
  }

  for (size_t pos = 0; pos < order.size(); ++pos) {
    const auto index = order[pos];
    const auto content = toy_content(index, o.native_resolution, o.seed);
    char file[32];
    std::snprintf(file, sizeof(file), "%05lld.png", static_cast<long long>(index));
    for (size_t s = 0; s < names.size(); ++s) {
      auto pixels = torch::clamp(content + patterns[s], -1.0, 1.0);
      write_image(dir / names[s] / to_string(split_of(pos)) / file, ImageTensor(pixels));
    }
  }

  const auto manifest_path = dir / "manifest.json";
  std::ofstream out(manifest_path);
  out << nlohmann::json{{"native_resolution", o.native_resolution}, {"classes", classes}}.dump(2)
      << "\n";
  if (!out) throw Error("io", "cannot write " + manifest_path.string());
  return manifest_path;
}

RunConfig toy_run_config() {
  RunConfig c;
  c.generator.backbone = Backbone::kUNet;
  c.generator.depth = 4;
  c.generator.base_channels = 16;
  c.discriminator.base_channels = 16;
  c.classifier.arch = "resnet10";
  c.classifier.width = 16;
  c.perceptual.base_channels = 8;
  c.patch.crop = 32;
  c.train.batch_size = 12;
  c.train.max_iters = 2000;
  c.train.pretrain_c_iters = 1000;
  // At the default 0.1 the adversarial term is swamped by D on this set and G
  // learns a fingerprint that is right in frequency but not in shape.
  c.train.weights.adversarial = 1.0;
  c.train.lr = 3e-4;
  c.train.checkpoint_every = 500;
  c.train.val_every = 250;
  return c;
}

}  // namespace gfd
