// gfd: train, evaluate and inspect fingerprint extractors.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gfd/analysis.hpp"
#include "gfd/error.hpp"
#include "gfd/image_io.hpp"
#include "gfd/inference.hpp"
#include "gfd/log.hpp"
#include "gfd/toy.hpp"
#include "gfd/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::optional<uint64_t> seed;
  std::optional<std::string> device;
  std::string log_level = "info";
  std::vector<std::string> overrides;
};

gfd::RunConfig build_config(const std::string& path, const Globals& g) {
  gfd::RunConfig cfg = path.empty() ? gfd::RunConfig{} : gfd::RunConfig::load(path);
  for (const auto& o : g.overrides) cfg.apply_override(o);
  if (g.seed) cfg.train.seed = *g.seed;
  if (g.device) cfg.device = *g.device;
  cfg.validate();
  return cfg;
}

// A run directory resolves to its best checkpoint.
fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::exists(p / "checkpoint.json")) return p;
  for (const char* sub : {"checkpoints/best", "checkpoints/latest"}) {
    if (fs::exists(p / sub / "checkpoint.json")) return p / sub;
  }
  throw gfd::Error("missing_checkpoint", "no checkpoint at " + p.string());
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

json prediction_json(const gfd::Prediction& p, const std::vector<gfd::SourceLabel>& labels) {
  return {{"label", p.label},
          {"name", labels.at(static_cast<size_t>(p.label)).name},
          {"confidence", p.confidence},
          {"probabilities", p.probabilities}};
}

std::string source_of(const fs::path& file, const fs::path& root) {
  auto rel = fs::relative(file.parent_path(), root);
  if (rel.empty() || rel == ".") return "all";
  return rel.generic_string();
}

int run_analyze(const fs::path& fp_dir, const fs::path& out_path, const Globals& g,
                const std::string& config_path) {
  const auto cfg = build_config(config_path, g).glcm;
  if (!fs::is_directory(fp_dir)) throw gfd::Error("missing_file", "no directory " + fp_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(fp_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".npy") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw gfd::Error("empty_input", "no .npy fingerprints under " + fp_dir.string());

  const auto labels = gfd::correlation_vector_labels(cfg);
  std::ofstream out(out_path);
  if (!out) throw gfd::Error("io", "cannot write " + out_path.string());
  out << "file,source";
  for (const auto& l : labels) out << "," << l;
  out << "\n";

  std::map<std::string, std::vector<std::vector<double>>> by_source;
  std::map<std::string, int64_t> skipped;
  for (const auto& f : files) {
    const auto source = source_of(f, fp_dir);
    try {
      gfd::Fingerprint fp(gfd::read_npy(f));
      auto v = gfd::fingerprint_correlation_vector(fp, cfg);
      out << fs::relative(f, fp_dir).generic_string() << "," << source;
      for (double x : v) out << "," << x;
      out << "\n";
      by_source[source].push_back(std::move(v));
    } catch (const gfd::Error& e) {
      if (e.code() != "zero_variance") throw;
      gfd::log::warn(f.string(), ": degenerate fingerprint, skipped");
      ++skipped[source];
    }
  }

  out << "\n# summary\nsource,statistic,count";
  for (const auto& l : labels) out << "," << l;
  out << "\n";
  for (const auto& [source, vectors] : by_source) {
    const auto stats = gfd::population_stats(vectors);
    auto row = [&](const char* name, auto value) {
      out << source << "," << name << "," << stats.count;
      for (size_t i = 0; i < stats.mean.size(); ++i) out << "," << value(i);
      out << "\n";
    };
    row("mean", [&](size_t i) { return stats.mean[i]; });
    row("variance", [&](size_t i) { return stats.variance[i]; });
    row("std", [&](size_t i) { return std::sqrt(stats.variance[i]); });
  }
  json summary = json::object();
  for (const auto& [source, vectors] : by_source) {
    summary[source] = {{"count", vectors.size()}, {"skipped", skipped[source]}};
  }
  print({{"fingerprints", files.size()}, {"sources", summary}, {"csv", out_path.string()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fingerprint extraction for GAN image attribution and detection", "gfd"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed (default 0)");
  app.add_option("--device", g.device, "cpu or cuda");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");
  app.add_option("--set", g.overrides, "Config override section.key=value (repeatable)")
      ->allow_extra_args(false);

  std::string config_path, manifest_path, out_dir, resume, ckpt, image, report, mode = "closed";
  std::string fp_path, carrier_path, fp_dir, split = "test";

  auto* train = app.add_subcommand("train", "Train G, H, D and C");
  train->add_option("--config", config_path, "Config file (JSON)");
  train->add_option("--manifest", manifest_path, "Dataset manifest")->required();
  train->add_option("--out", out_dir, "Run output directory")->required();
  train->add_option("--resume", resume, "Checkpoint directory to resume from");

  auto* eval = app.add_subcommand("eval", "Accuracy and confusion matrix on a manifest");
  eval->add_option("--ckpt", ckpt, "Checkpoint or run directory")->required();
  eval->add_option("--manifest", manifest_path, "Manifest to evaluate on");
  eval->add_option("--mode", mode, "closed|open");
  eval->add_option("--split", split, "train|val|test");
  eval->add_option("--report", report, "Write the report here (JSON)");

  auto* attribute = app.add_subcommand("attribute", "Source of one image");
  attribute->add_option("--ckpt", ckpt)->required();
  attribute->add_option("--image", image)->required();

  auto* detect = app.add_subcommand("detect", "Real/fake decision for one image");
  detect->add_option("--ckpt", ckpt)->required();
  detect->add_option("--image", image)->required();

  auto* extract = app.add_subcommand("extract-fp", "Write the fingerprint as .npy and .png");
  extract->add_option("--ckpt", ckpt)->required();
  extract->add_option("--image", image)->required();
  extract->add_option("--out", out_dir, "Output path; .npy and .png are appended")->required();

  auto* composite = app.add_subcommand("composite", "Add a fingerprint to a carrier image");
  composite->add_option("--fp", fp_path, "Fingerprint .npy")->required();
  composite->add_option("--carrier", carrier_path, "Carrier image")->required();
  composite->add_option("--out", out_dir, "Output image")->required();

  auto* analyze = app.add_subcommand("analyze-glcm", "GLCM correlation vectors of fingerprints");
  analyze->add_option("--fp-dir", fp_dir, "Directory of .npy fingerprints; subdirectory = source")
      ->required();
  analyze->add_option("--out", out_dir, "CSV output")->required();
  analyze->add_option("--config", config_path, "Config file supplying the glcm section");

  gfd::ToyDatasetOptions toy;
  auto* make_toy = app.add_subcommand("make-toy", "Write the synthetic 3-source toy dataset");
  make_toy->add_option("--out", out_dir, "Dataset directory")->required();
  make_toy->add_option("--pool", toy.pool_size, "Shared content pool size");
  make_toy->add_option("--size", toy.native_resolution, "Native image size");
  make_toy->add_option("--fakes", toy.num_fake_sources, "Number of fake sources");
  make_toy->add_option("--amplitude", toy.amplitude, "Pattern amplitude in [-1, 1] units");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (app.get_subcommands().empty()) {
      for (int i = 1; i < argc; ++i) {
        std::string a = argv[i];
        if (!a.empty() && a[0] != '-') {
          msg = "unknown subcommand '" + a + "'";
          break;
        }
        if (a.find('=') == std::string::npos && a != "-h" && a != "--help") ++i;  // option value
      }
    }
    std::cerr << "error: usage: " << msg << "\n" << app.help();
    return 2;
  }

  try {
    gfd::log::init(g.log_level);
    if (*train) {
      auto cfg = build_config(config_path, g);
      const auto manifest = gfd::load_manifest(manifest_path);
      gfd::FitOptions opts;
      opts.out_dir = out_dir;
      if (!resume.empty()) opts.resume = resolve_checkpoint(resume);
      const auto result = gfd::fit(manifest, cfg, opts);
      print({{"iterations", result.iterations},
             {"best_val_accuracy", result.best_val_accuracy},
             {"latest", result.final_checkpoint.string()},
             {"best", result.best_checkpoint.string()}});
    } else if (*eval) {
      const auto m = gfd::eval_mode_from_string(mode);
      if (manifest_path.empty()) {
        throw gfd::Error("bad_config", std::string("eval --mode ") + gfd::to_string(m) +
                                           " needs --manifest");
      }
      auto model = gfd::load_model(resolve_checkpoint(ckpt));
      const auto manifest = gfd::load_manifest(manifest_path);
      const auto r = gfd::evaluate(model, manifest, m, gfd::split_from_string(split));
      if (!report.empty()) {
        std::ofstream out(report);
        out << r.to_json().dump(2) << "\n";
        if (!out) throw gfd::Error("io", "cannot write " + report);
      }
      print(r.to_json());
    } else if (*attribute) {
      auto model = gfd::load_model(resolve_checkpoint(ckpt));
      const auto p = gfd::attribute(model, gfd::read_image(image));
      print(prediction_json(p, model.meta.labels));
    } else if (*detect) {
      auto model = gfd::load_model(resolve_checkpoint(ckpt));
      const auto d = gfd::detect(model, gfd::read_image(image));
      print({{"is_fake", d.is_fake}, {"score", d.score}});
    } else if (*extract) {
      auto model = gfd::load_model(resolve_checkpoint(ckpt));
      const auto fp = gfd::extract_fingerprint(model, gfd::read_image(image));
      const fs::path stem(out_dir);
      if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
      auto npy = stem, png = stem;
      npy += ".npy";
      png += ".png";
      gfd::write_npy(npy, fp.residual());
      gfd::write_image(png, gfd::ImageTensor(gfd::normalize_pixels(gfd::fingerprint_visualization(fp))));
      print({{"npy", npy.string()}, {"png", png.string()}});
    } else if (*composite) {
      gfd::Fingerprint fp(gfd::read_npy(fp_path));
      const auto carrier = gfd::read_image(carrier_path);
      const auto out = gfd::composite(fp, carrier, gfd::SourceLabel{});
      gfd::write_image(out_dir, out.image);
      print({{"out", out_dir}});
    } else if (*analyze) {
      return run_analyze(fp_dir, out_dir, g, config_path);
    } else if (*make_toy) {
      if (g.seed) toy.seed = *g.seed;
      const auto manifest = gfd::write_toy_dataset(out_dir, toy);
      auto cfg = gfd::toy_run_config();
      cfg.save(fs::path(out_dir) / "toy_config.json");
      print({{"manifest", manifest.string()},
             {"config", (fs::path(out_dir) / "toy_config.json").string()}});
    }
  } catch (const gfd::Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: internal: " << msg << std::endl;
    return 1;
  }
  return 0;
}
