#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "gfd/data_model.hpp"

namespace gfd {

/// Reads an 8-bit PNG/JPEG as RGB normalized to [-1, 1]. Gray inputs are
/// replicated across channels.
ImageTensor read_image(const std::filesystem::path& path);

void write_image(const std::filesystem::path& path, const ImageTensor& image);

/// Min-max remap of a fingerprint to 8-bit. A constant map renders mid-gray.
torch::Tensor fingerprint_visualization(const Fingerprint& fp);

/// float32 .npy (C order, little endian). Any tensor rank.
void write_npy(const std::filesystem::path& path, const torch::Tensor& tensor);
torch::Tensor read_npy(const std::filesystem::path& path);

}  // namespace gfd
