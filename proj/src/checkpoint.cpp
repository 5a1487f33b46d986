#include "gfd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gfd/error.hpp"

namespace gfd {

TensorDict state_dict(const torch::nn::Module& module) {
  TensorDict out;
  for (const auto& p : module.named_parameters()) out[p.key()] = p.value();
  for (const auto& b : module.named_buffers()) out[b.key()] = b.value();
  return out;
}

namespace {

void copy_into(torch::Tensor& target, const torch::Tensor& source, const std::string& name) {
  if (target.sizes() != source.sizes()) {
    throw Error("weights_mismatch", "shape mismatch for '" + name + "'");
  }
  torch::NoGradGuard guard;
  target.copy_(source.to(target.device(), target.scalar_type()));
}

}  // namespace

void load_state_dict(torch::nn::Module& module, const TensorDict& dict, bool allow_extra) {
  size_t used = 0;
  for (auto& p : module.named_parameters()) {
    auto it = dict.find(p.key());
    if (it == dict.end()) throw Error("weights_mismatch", "missing parameter '" + p.key() + "'");
    copy_into(p.value(), it->second, p.key());
    ++used;
  }
  for (auto& b : module.named_buffers()) {
    auto it = dict.find(b.key());
    if (it == dict.end()) throw Error("weights_mismatch", "missing buffer '" + b.key() + "'");
    copy_into(b.value(), it->second, b.key());
    ++used;
  }
  if (!allow_extra && used != dict.size()) {
    throw Error("weights_mismatch", "weights file has entries the network does not use");
  }
}

void load_parameters(torch::nn::Module& module, const TensorDict& dict, bool strict) {
  for (auto& p : module.named_parameters()) {
    auto it = dict.find(p.key());
    if (it == dict.end()) throw Error("weights_mismatch", "missing parameter '" + p.key() + "'");
    copy_into(p.value(), it->second, p.key());
  }
  for (auto& b : module.named_buffers()) {
    auto it = dict.find(b.key());
    if (it != dict.end()) {
      copy_into(b.value(), it->second, b.key());
    } else if (strict) {
      throw Error("weights_mismatch", "missing buffer '" + b.key() + "'");
    }
  }
}

void write_tensor_dict(const std::filesystem::path& path, const TensorDict& dict) {
  c10::Dict<std::string, torch::Tensor> d;
  for (const auto& [k, v] : dict) d.insert(k, v.detach().to(torch::kCPU).contiguous());
  const auto bytes = torch::pickle_save(d);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TensorDict read_tensor_dict(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_file", "cannot open weights " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c10::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    throw Error("weights_format", "cannot parse weights " + path.string());
  }
  if (!value.isGenericDict()) throw Error("weights_format", path.string() + " is not a dict");
  TensorDict out;
  for (const auto& entry : value.toGenericDict()) {
    if (!entry.key().isString() || !entry.value().isTensor()) {
      throw Error("weights_format", path.string() + " must map names to tensors");
    }
    out[entry.key().toStringRef()] = entry.value().toTensor();
  }
  return out;
}

std::string tensor_dict_hash(const TensorDict& dict) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, tensor] : dict) {
    mix(name.data(), name.size());
    for (auto s : tensor.sizes()) mix(&s, sizeof(s));
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    mix(t.data_ptr(), static_cast<size_t>(t.numel()) * t.element_size());
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

nlohmann::json CheckpointMeta::to_json() const {
  nlohmann::json doc;
  doc["format"] = kCheckpointFormat;
  doc["iteration"] = iteration;
  doc["best_val_accuracy"] = best_val_accuracy;
  doc["classifier_pretrained"] = classifier_pretrained;
  doc["task"] = to_string(task);
  doc["classes"] = nlohmann::json::array();
  for (const auto& l : labels) {
    doc["classes"].push_back({{"index", l.index}, {"name", l.name}, {"is_real", l.is_real}});
  }
  doc["patch"] = {{"crop", crop},
                  {"resize_to", resize_to ? nlohmann::json(*resize_to) : nlohmann::json(nullptr)}};
  doc["networks"] = networks;
  return doc;
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw Error("checkpoint_format", "unsupported checkpoint format");
    }
    CheckpointMeta m;
    m.iteration = doc.at("iteration").get<int64_t>();
    m.best_val_accuracy = doc.at("best_val_accuracy").get<double>();
    m.classifier_pretrained = doc.at("classifier_pretrained").get<bool>();
    m.task = task_from_string(doc.at("task").get<std::string>());
    for (const auto& c : doc.at("classes")) {
      m.labels.push_back({c.at("index").get<int64_t>(), c.at("name").get<std::string>(),
                          c.at("is_real").get<bool>()});
    }
    m.crop = doc.at("patch").at("crop").get<int64_t>();
    if (!doc.at("patch").at("resize_to").is_null()) {
      m.resize_to = doc.at("patch").at("resize_to").get<int64_t>();
    }
    m.networks = doc.at("networks");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint_format", std::string("malformed checkpoint.json: ") + e.what());
  }
}

void save_network(const std::filesystem::path& dir, const std::string& name,
                  const torch::nn::Module& module, CheckpointMeta& meta) {
  const auto dict = state_dict(module);
  const std::string file = name + ".pt";
  write_tensor_dict(dir / file, dict);
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : parameter_manifest(module)) {
    shapes.push_back({{"name", s.name}, {"shape", s.shape}});
  }
  meta.networks[name] = {{"file", file},
                         {"hash", tensor_dict_hash(dict)},
                         {"parameter_count", parameter_count(module)},
                         {"parameters", shapes}};
}

void load_network(const std::filesystem::path& dir, const std::string& name,
                  torch::nn::Module& module, const CheckpointMeta& meta) {
  if (!meta.networks.contains(name)) {
    throw Error("missing_checkpoint", "checkpoint has no network '" + name + "'");
  }
  const auto& entry = meta.networks[name];
  const auto dict = read_tensor_dict(dir / entry.at("file").get<std::string>());
  if (tensor_dict_hash(dict) != entry.at("hash").get<std::string>()) {
    throw Error("checkpoint_integrity", "hash mismatch for network '" + name + "'");
  }
  load_state_dict(module, dict);
}

void write_meta(const std::filesystem::path& dir, const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "checkpoint.json");
  if (!out) throw Error("io", "cannot write checkpoint metadata in " + dir.string());
  out << meta.to_json().dump(2) << "\n";
}

CheckpointMeta read_meta(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw Error("missing_checkpoint", "no checkpoint at " + dir.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint_format", std::string("malformed checkpoint.json: ") + e.what());
  }
  return CheckpointMeta::from_json(doc);
}

}  // namespace gfd
