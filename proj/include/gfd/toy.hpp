#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "gfd/config.hpp"

namespace gfd {

// Synthetic attribution set: one pool of smooth images, each "fake" source adds
// its own fixed periodic pattern to every pool image; "real" is the pool as is.
struct ToyDatasetOptions {
  int64_t pool_size = 500;
  // Equal to the toy crop, so every training patch sees the pattern at one phase.
  int64_t native_resolution = 32;
  double amplitude = 0.05;  // in [-1, 1] pixel units
  int num_fake_sources = 2;
  uint64_t seed = 7;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
};

/// Planted pattern of fake source `source` (1-based), [3, size, size] float32.
torch::Tensor toy_pattern(int source, int64_t size, double amplitude);

/// Pool image `index`: smooth content within [-0.8, 0.8], [3, size, size].
torch::Tensor toy_content(int64_t index, int64_t size, uint64_t seed);

std::vector<std::string> toy_source_names(int num_fake_sources);

/// Writes PNGs under dir/<source>/<split>/ and dir/manifest.json; returns the
/// manifest path.
std::filesystem::path write_toy_dataset(const std::filesystem::path& dir,
                                        const ToyDatasetOptions& options = {});

/// Small configuration used on the toy set (depth 4, 16 base channels).
RunConfig toy_run_config();

}  // namespace gfd
