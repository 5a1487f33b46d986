#include "gfd/image_io.hpp"

#include <cstring>
#include <fstream>
#include <regex>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gfd/error.hpp"

namespace gfd {

ImageTensor read_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (raw.empty()) throw Error("image_read", "cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return ImageTensor(normalize_pixels(hwc.permute({2, 0, 1})).contiguous());
}

void write_image(const std::filesystem::path& path, const ImageTensor& image) {
  auto hwc = denormalize_pixels(image.pixels()).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
              hwc.data_ptr<uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error("image_write", "cannot write image " + path.string());
  }
}

torch::Tensor fingerprint_visualization(const Fingerprint& fp) {
  auto r = fp.residual().to(torch::kFloat64);
  const double lo = r.min().item<double>(), hi = r.max().item<double>();
  if (hi - lo <= 0) return torch::full(r.sizes(), 128, torch::kUInt8);
  return torch::round((r - lo) / (hi - lo) * 255.0).clamp(0, 255).to(torch::kUInt8);
}

void write_npy(const std::filesystem::path& path, const torch::Tensor& tensor) {
  auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::string shape = "(";
  for (int64_t i = 0; i < t.dim(); ++i) {
    shape += std::to_string(t.size(i));
    shape += (t.dim() == 1 || i + 1 < t.dim()) ? "," : "";
    if (i + 1 < t.dim()) shape += " ";
  }
  shape += ")";
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape + ", }";
  // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
  const size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("npy_write", "cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const uint16_t len = static_cast<uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

torch::Tensor read_npy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("npy_read", "cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) {
    throw Error("npy_read", path.string() + " is not an .npy file");
  }
  uint32_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (header.find("'<f4'") == std::string::npos) {
    throw Error("npy_read", path.string() + ": only little-endian float32 is supported");
  }
  if (header.find("'fortran_order': True") != std::string::npos) {
    throw Error("npy_read", path.string() + ": fortran order is not supported");
  }
  std::smatch m;
  static const std::regex kShape(R"('shape':\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, kShape)) throw Error("npy_read", "missing shape in header");
  std::vector<int64_t> shape;
  static const std::regex kDim(R"(\d+)");
  const std::string dims = m[1];
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), kDim); it != std::sregex_iterator();
       ++it) {
    shape.push_back(std::stoll(it->str()));
  }
  auto t = torch::empty(shape, torch::kFloat32);
  in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!in) throw Error("npy_read", path.string() + " is truncated");
  return t;
}

}  // namespace gfd
