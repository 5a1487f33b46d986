#include "gfd/data_model.hpp"

#include <glob.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gfd/error.hpp"

namespace gfd {
namespace {

void check_image_shape(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 3 || t.size(0) != 3) {
    throw Error("bad_shape", std::string(what) + " must be a [3, H, W] tensor");
  }
  if (!t.is_floating_point()) {
    throw Error("bad_dtype", std::string(what) + " must be floating point");
  }
  if (!torch::isfinite(t).all().item<bool>()) {
    throw Error("non_finite", std::string(what) + " contains non-finite values");
  }
}

bool has_wildcard(const std::string& s) {
  return s.find_first_of("*?[") != std::string::npos;
}

std::vector<std::filesystem::path> expand(const std::filesystem::path& base_dir,
                                          const std::string& pattern) {
  std::filesystem::path full = pattern;
  if (full.is_relative()) full = base_dir / full;
  if (!has_wildcard(pattern)) {
    if (!std::filesystem::is_regular_file(full)) {
      throw Error("missing_file", "manifest references missing file " + full.string());
    }
    return {full};
  }
  glob_t g{};
  std::vector<std::filesystem::path> out;
  int rc = ::glob(full.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (size_t i = 0; i < g.gl_pathc; ++i) {
      std::filesystem::path p = g.gl_pathv[i];
      if (std::filesystem::is_regular_file(p)) out.push_back(p);
    }
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) {
    throw Error("glob_failed", "could not expand pattern " + full.string());
  }
  return out;
}

}  // namespace

ImageTensor::ImageTensor(torch::Tensor pixels) : pixels_(std::move(pixels)) {
  check_image_shape(pixels_, "image");
}

Fingerprint::Fingerprint(torch::Tensor residual) : residual_(std::move(residual)) {
  check_image_shape(residual_, "fingerprint");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw Error("bad_split", "unknown split '" + name + "'");
}

const std::vector<std::filesystem::path>& ManifestClass::files(Split split) const {
  switch (split) {
    case Split::kTrain: return train;
    case Split::kVal: return val;
    case Split::kTest: return test;
  }
  return train;
}

std::vector<std::filesystem::path>& ManifestClass::files(Split split) {
  const auto& self = *this;
  return const_cast<std::vector<std::filesystem::path>&>(self.files(split));
}

std::vector<SourceLabel> DatasetManifest::labels() const {
  std::vector<SourceLabel> out;
  for (const auto& c : classes) out.push_back(c.label);
  return out;
}

std::vector<std::string> DatasetManifest::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.label.name);
  return out;
}

const SourceLabel& DatasetManifest::real_label() const {
  for (const auto& c : classes) {
    if (c.label.is_real) return c.label;
  }
  throw Error("no_real_class", "manifest has no real class");
}

const SourceLabel& DatasetManifest::label_by_name(const std::string& name) const {
  for (const auto& c : classes) {
    if (c.label.name == name) return c.label;
  }
  throw Error("unknown_label", "no class named '" + name + "'");
}

std::vector<ManifestSample> DatasetManifest::samples(Split split) const {
  std::vector<ManifestSample> out;
  for (const auto& c : classes) {
    for (const auto& f : c.files(split)) out.push_back({f, c.label});
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text,
                               const std::filesystem::path& base_dir,
                               const ManifestOptions& options) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest_parse", std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error("manifest_schema", "manifest must be an object");
  static const std::set<std::string> kTopKeys = {"native_resolution", "resize_to", "classes"};
  static const std::set<std::string> kClassKeys = {"name", "is_real", "train", "val", "test"};
  for (const auto& [key, _] : doc.items()) {
    if (!kTopKeys.count(key)) throw Error("manifest_schema", "unknown manifest key '" + key + "'");
  }
  if (!doc.contains("native_resolution") || !doc["native_resolution"].is_number_integer()) {
    throw Error("manifest_schema", "native_resolution must be an integer");
  }
  if (!doc.contains("classes") || !doc["classes"].is_array() || doc["classes"].empty()) {
    throw Error("manifest_schema", "classes must be a nonempty array");
  }

  DatasetManifest m;
  m.native_resolution = doc["native_resolution"].get<int64_t>();
  if (m.native_resolution <= 0) {
    throw Error("manifest_schema", "native_resolution must be positive");
  }
  if (doc.contains("resize_to")) m.resize_to = doc["resize_to"].get<int64_t>();

  std::set<std::string> seen;
  std::vector<ManifestClass> reals, fakes;
  for (const auto& entry : doc["classes"]) {
    if (!entry.is_object()) throw Error("manifest_schema", "class entries must be objects");
    for (const auto& [key, _] : entry.items()) {
      if (!kClassKeys.count(key)) throw Error("manifest_schema", "unknown class key '" + key + "'");
    }
    if (!entry.contains("name") || !entry["name"].is_string()) {
      throw Error("manifest_schema", "class entry needs a string name");
    }
    ManifestClass c;
    c.label.name = entry["name"].get<std::string>();
    c.label.is_real = entry.value("is_real", false);
    if (c.label.name.empty()) throw Error("manifest_schema", "class name is empty");
    if (!seen.insert(c.label.name).second) {
      throw Error("duplicate_label", "duplicate class name '" + c.label.name + "'");
    }
    for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
      const auto key = to_string(split);
      if (!entry.contains(key)) continue;
      const auto& patterns = entry[key];
      if (!patterns.is_array()) throw Error("manifest_schema", key + " must be an array of paths");
      std::vector<std::filesystem::path> files;
      for (const auto& p : patterns) {
        auto found = expand(base_dir, p.get<std::string>());
        files.insert(files.end(), found.begin(), found.end());
      }
      std::sort(files.begin(), files.end());
      files.erase(std::unique(files.begin(), files.end()), files.end());
      if (files.empty()) {
        throw Error("empty_split", "empty split: class '" + c.label.name + "' has no files in " + key);
      }
      c.files(split) = std::move(files);
    }
    (c.label.is_real ? reals : fakes).push_back(std::move(c));
  }
  if (reals.size() > 1) throw Error("multiple_real", "more than one class is marked is_real");
  if (options.require_real && reals.empty()) {
    throw Error("no_real_class", "manifest has no class marked is_real");
  }
  if (fakes.empty()) throw Error("no_fake_class", "manifest needs at least one generated class");

  for (auto& c : reals) m.classes.push_back(std::move(c));
  for (auto& c : fakes) m.classes.push_back(std::move(c));
  for (size_t i = 0; i < m.classes.size(); ++i) m.classes[i].label.index = static_cast<int64_t>(i);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error("missing_file", "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_manifest(ss.str(), path.parent_path(), options);
  m.source = path;
  return m;
}

PatchPolicy PatchPolicy::defaults_for(int64_t native_resolution, CropMode mode, int64_t crop) {
  PatchPolicy p;
  if (native_resolution == 128) p.resize_to = 512;
  p.crop = crop;
  p.mode = mode;
  return p;
}

CropOffset center_offset(int64_t height, int64_t width, int64_t crop) {
  return {(height - crop) / 2, (width - crop) / 2};
}

ImageTensor resize_bilinear(const ImageTensor& image, int64_t height, int64_t width) {
  namespace F = torch::nn::functional;
  auto out = F::interpolate(image.pixels().unsqueeze(0),
                            F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{height, width})
                                .mode(torch::kBilinear)
                                .align_corners(false));
  return ImageTensor(out.squeeze(0).contiguous());
}

ImageTensor prepare_patch(const ImageTensor& image, const PatchPolicy& policy, Rng& rng,
                          CropOffset* offset_out) {
  if (policy.crop <= 0) throw Error("bad_policy", "crop must be positive");
  if (policy.resize_to && policy.crop > *policy.resize_to) {
    throw Error("bad_policy", "crop exceeds resize_to");
  }
  ImageTensor src = image;
  if (policy.resize_to &&
      (image.height() != *policy.resize_to || image.width() != *policy.resize_to)) {
    src = resize_bilinear(image, *policy.resize_to, *policy.resize_to);
  }
  const int64_t h = src.height(), w = src.width();
  if (h < policy.crop || w < policy.crop) {
    throw Error("image_too_small", "image " + std::to_string(h) + "x" + std::to_string(w) +
                                       " is smaller than crop " + std::to_string(policy.crop));
  }
  CropOffset off = center_offset(h, w, policy.crop);
  if (policy.mode == CropMode::kTrain) {
    std::uniform_int_distribution<int64_t> rows(0, h - policy.crop), cols(0, w - policy.crop);
    off.row = rows(rng);
    off.col = cols(rng);
  }
  if (offset_out) *offset_out = off;
  auto patch = src.pixels()
                   .narrow(1, off.row, policy.crop)
                   .narrow(2, off.col, policy.crop)
                   .contiguous();
  return ImageTensor(std::move(patch));
}

torch::Tensor composite_batch(const torch::Tensor& residuals, const torch::Tensor& carriers) {
  if (residuals.sizes() != carriers.sizes()) {
    throw Error("shape_mismatch", "fingerprint and carrier shapes differ");
  }
  return torch::clamp(carriers + residuals, -1.0, 1.0);
}

FingerprintedImage composite(const Fingerprint& fp, const ImageTensor& carrier,
                             const SourceLabel& origin) {
  if (fp.residual().sizes() != carrier.pixels().sizes()) {
    throw Error("shape_mismatch", "fingerprint and carrier shapes differ");
  }
  auto residual = fp.residual().to(carrier.pixels().scalar_type());
  return {ImageTensor(composite_batch(residual, carrier.pixels())), origin, carrier};
}

torch::Tensor normalize_pixels(const torch::Tensor& bytes) {
  return bytes.to(torch::kFloat32) / 127.5 - 1.0;
}

torch::Tensor denormalize_pixels(const torch::Tensor& pixels) {
  return torch::round((pixels.to(torch::kFloat32) + 1.0) * 127.5).clamp(0, 255).to(torch::kUInt8);
}

}  // namespace gfd
