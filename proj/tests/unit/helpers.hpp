#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <torch/torch.h>

#include "gfd/config.hpp"
#include "gfd/networks.hpp"
#include "gfd/toy.hpp"

namespace testing {

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gfd_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

// Small config that trains in milliseconds per step on 32x32 patches.
inline gfd::RunConfig tiny_config() {
  auto c = gfd::toy_run_config();
  c.train.batch_size = 6;
  c.train.pretrain_c_iters = 2;
  c.train.max_iters = 4;
  c.train.val_every = 2;
  c.train.checkpoint_every = 2;
  return c;
}

// Toy dataset shared by tests in one process.
inline std::filesystem::path tiny_toy() {
  static const auto manifest = [] {
    gfd::ToyDatasetOptions o;
    o.pool_size = 40;
    return gfd::write_toy_dataset(scratch("toy"), o);
  }();
  return manifest;
}

}  // namespace testing
