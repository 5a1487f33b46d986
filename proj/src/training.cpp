#include "gfd/training.hpp"

#include <numeric>
#include <sstream>

#include "gfd/error.hpp"
#include "gfd/image_io.hpp"
#include "gfd/inference.hpp"
#include "gfd/log.hpp"

namespace gfd {

// ---------------------------------------------------------------- data

PatchSampler::PatchSampler(const DatasetManifest& manifest, Split split, PatchPolicy policy,
                           std::vector<int64_t> label_map)
    : label_map_(std::move(label_map)), policy_(policy) {
  policy_.mode = CropMode::kTrain;
  for (const auto& c : manifest.classes) {
    if (c.files(split).empty()) {
      throw Error("empty_split", "empty split: class '" + c.label.name + "' has no " +
                                     to_string(split) + " files");
    }
    files_.push_back(c.files(split));
  }
  if (label_map_.size() != files_.size()) {
    throw Error("bad_config", "label map does not cover every manifest class");
  }
}

const ImageTensor& PatchSampler::image(const std::filesystem::path& path) {
  auto it = cache_.find(path);
  if (it == cache_.end()) it = cache_.emplace(path, read_image(path)).first;
  return it->second;
}

Batch PatchSampler::next(int64_t batch_size, Rng& rng) {
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  const size_t K = files_.size();
  for (int64_t i = 0; i < batch_size; ++i) {
    const size_t cls = static_cast<size_t>(i) % K;
    std::uniform_int_distribution<size_t> pick(0, files_[cls].size() - 1);
    const auto& img = image(files_[cls][pick(rng)]);
    images.push_back(prepare_patch(img, policy_, rng).pixels());
    labels.push_back(label_map_[cls]);
  }
  return {torch::stack(images), torch::tensor(labels, torch::kLong)};
}

std::vector<SourceLabel> training_labels(const DatasetManifest& manifest, Task task) {
  if (task == Task::kAttribution) return manifest.labels();
  return {{0, manifest.real_label().name, true}, {1, "fake", false}};
}

// ---------------------------------------------------------------- trainer

namespace {

torch::Device parse_device(const std::string& name) {
  torch::Device device(name);
  if (device.is_cuda() && !torch::cuda::is_available()) {
    throw Error("device_unavailable", "CUDA requested but not available");
  }
  return device;
}

std::vector<torch::Tensor> concat_params(torch::nn::Module& a, torch::nn::Module& b) {
  auto out = a.parameters();
  auto more = b.parameters();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

}  // namespace

Trainer::Trainer(RunConfig config, std::vector<SourceLabel> labels)
    : config_(std::move(config)),
      labels_(std::move(labels)),
      device_(parse_device(config_.device)),
      rng_(config_.train.seed) {
  config_.validate();
  real_index_ = -1;
  for (const auto& l : labels_) {
    if (l.is_real) real_index_ = l.index;
  }
  if (real_index_ < 0) throw Error("no_real_class", "training taxonomy has no real class");
  const auto num_classes = static_cast<int64_t>(labels_.size());

  torch::manual_seed(config_.train.seed);
  auto gcfg = config_.generator;
  gcfg.num_classes = num_classes;
  nets_.generator = Generator(gcfg);
  nets_.head = ClassificationHead(nets_.generator->latent_channels(), num_classes);
  nets_.discriminator = PatchDiscriminator(config_.discriminator);
  auto ccfg = config_.classifier;
  ccfg.num_classes = num_classes;
  nets_.classifier = SourceClassifier(ccfg);
  if (config_.train.weights.use_perceptual) {
    nets_.perceptual = PerceptualExtractor(config_.perceptual);
    nets_.perceptual->to(device_);
  }
  nets_.generator->to(device_);
  nets_.head->to(device_);
  nets_.discriminator->to(device_);
  nets_.classifier->to(device_);

  const auto& t = config_.train;
  auto options = torch::optim::AdamOptions(t.lr).betas({t.beta1, t.beta2});
  opt_gh_ = std::make_unique<torch::optim::Adam>(
      concat_params(*nets_.generator, *nets_.head), options);
  opt_d_ = std::make_unique<torch::optim::Adam>(nets_.discriminator->parameters(), options);
  opt_c_ = std::make_unique<torch::optim::Adam>(nets_.classifier->parameters(), options);
}

void Trainer::apply_lr(double lr) {
  for (auto* opt : {opt_gh_.get(), opt_d_.get(), opt_c_.get()}) {
    for (auto& group : opt->param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
  }
}

double Trainer::optimizer_lr() const {
  return static_cast<const torch::optim::AdamOptions&>(opt_gh_->param_groups().front().options())
      .lr();
}

torch::Tensor Trainer::sample_carriers(const torch::Tensor& labels) {
  auto reals = torch::nonzero(labels == real_index_).flatten().to(torch::kCPU);
  if (reals.numel() == 0) {
    throw Error("no_real_in_batch", "batch has no real image to carry fingerprints");
  }
  std::uniform_int_distribution<int64_t> pick(0, reals.numel() - 1);
  std::vector<int64_t> idx;
  for (int64_t i = 0; i < labels.size(0); ++i) idx.push_back(reals[pick(rng_)].item<int64_t>());
  return torch::tensor(idx, torch::kLong);
}

StepReport Trainer::train_step(const Batch& batch) {
  const auto& w = config_.train.weights;
  const bool composite_needed = w.use_adversarial || w.use_aux_cls || w.use_perceptual;
  const double lr = learning_rate_at(config_.train, iteration_);
  apply_lr(lr);

  auto images = batch.images.to(device_);
  auto labels = batch.labels.to(device_);
  torch::Tensor carriers;
  if (composite_needed) {
    carriers = images.index_select(0, sample_carriers(batch.labels).to(device_));
  }

  auto& G = *nets_.generator;
  auto& H = *nets_.head;
  auto& D = *nets_.discriminator;
  auto& C = *nets_.classifier;

  StepReport report;
  report.iteration = iteration_;
  report.lr = lr;

  // Generator phase: {G, H} move, D and C are fixed functions.
  {
    G.train();
    H.train();
    C.eval();
    set_requires_grad(D, false);
    set_requires_grad(C, false);

    auto out = G.forward(images);
    auto l_latent = loss_latent_cls(H, out.latent, labels);
    auto total = w.latent * l_latent;
    GeneratorTerms terms;
    terms.latent = l_latent.item<double>();
    if (composite_needed) {
      auto x_fp = composite_batch(out.fingerprint, carriers);
      if (w.use_adversarial) {
        auto l = loss_adv_G(D, x_fp);
        total = total + w.adversarial * l;
        terms.adversarial = l.item<double>();
      }
      if (w.use_aux_cls) {
        auto l = loss_aux_cls_G(C, x_fp, labels);
        total = total + w.aux_cls * l;
        terms.aux_cls = l.item<double>();
      }
      if (w.use_perceptual) {
        auto l = loss_perceptual(*nets_.perceptual, x_fp, carriers);
        total = total + w.perceptual * l;
        terms.perceptual = l.item<double>();
      }
    }
    opt_gh_->zero_grad();
    total.backward();
    opt_gh_->step();
    report.generator = total_G(terms, w);

    set_requires_grad(D, true);
    set_requires_grad(C, true);
    if (phase_hook_) phase_hook_(Phase::kGenerator);
  }

  // Discriminator/classifier phase: G is fixed; fingerprints are recomputed
  // with the updated G.
  if (w.use_adversarial || w.use_aux_cls) {
    torch::Tensor x_fp;
    {
      torch::NoGradGuard guard;
      G.eval();
      x_fp = composite_batch(G.forward(images).fingerprint, carriers);
      G.train();
    }
    torch::Tensor total;
    double cls_value = 0.0, adv_value = 0.0;
    if (w.use_aux_cls) {
      C.train();
      auto l = loss_aux_cls_C(C, images, labels);
      cls_value = l.item<double>();
      total = l;
    }
    if (w.use_adversarial) {
      // D's "real" side is the batch's input images, every source included:
      // a fingerprinted image should pass as an image of its origin.
      auto l = loss_adv_D(D, images, x_fp);
      adv_value = l.item<double>();
      total = total.defined() ? total + l : l;
    }
    opt_d_->zero_grad();
    opt_c_->zero_grad();
    total.backward();
    if (w.use_adversarial) opt_d_->step();
    if (w.use_aux_cls) opt_c_->step();
    report.critic = total_DC(cls_value, adv_value);
  }
  if (phase_hook_) phase_hook_(Phase::kCritic);

  ++iteration_;
  return report;
}

double Trainer::pretrain_classifier_step(const Batch& batch) {
  auto& C = *nets_.classifier;
  C.train();
  for (auto& group : opt_c_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(config_.train.lr);
  }
  auto loss = loss_aux_cls_C(C, batch.images.to(device_), batch.labels.to(device_));
  opt_c_->zero_grad();
  loss.backward();
  opt_c_->step();
  return loss.item<double>();
}

void Trainer::save(const std::filesystem::path& dir, const PatchPolicy& eval_policy) const {
  auto tmp = dir;
  tmp += ".tmp";
  std::filesystem::remove_all(tmp);
  std::filesystem::create_directories(tmp);

  CheckpointMeta meta;
  meta.iteration = iteration_;
  meta.best_val_accuracy = best_val_;
  meta.classifier_pretrained = classifier_pretrained_;
  meta.task = config_.train.task;
  meta.labels = labels_;
  meta.resize_to = eval_policy.resize_to;
  meta.crop = eval_policy.crop;
  save_network(tmp, "G", *nets_.generator, meta);
  save_network(tmp, "H", *nets_.head, meta);
  save_network(tmp, "D", *nets_.discriminator, meta);
  save_network(tmp, "C", *nets_.classifier, meta);
  torch::save(*opt_gh_, (tmp / "optim_GH.pt").string());
  torch::save(*opt_d_, (tmp / "optim_D.pt").string());
  torch::save(*opt_c_, (tmp / "optim_C.pt").string());
  {
    std::ofstream out(tmp / "rng.txt");
    out << rng_;
  }
  write_tensor_dict(tmp / "torch_rng.pt", {{"cpu", cpu_rng_state()}});
  config_.save(tmp / "config.json");
  write_meta(tmp, meta);

  std::filesystem::remove_all(dir);
  std::filesystem::rename(tmp, dir);
}

void Trainer::restore(const std::filesystem::path& dir) {
  const auto meta = read_meta(dir);
  if (meta.labels != labels_) {
    throw Error("taxonomy_mismatch", "checkpoint labels differ from the training taxonomy");
  }
  load_network(dir, "G", *nets_.generator, meta);
  load_network(dir, "H", *nets_.head, meta);
  load_network(dir, "D", *nets_.discriminator, meta);
  load_network(dir, "C", *nets_.classifier, meta);
  torch::load(*opt_gh_, (dir / "optim_GH.pt").string());
  torch::load(*opt_d_, (dir / "optim_D.pt").string());
  torch::load(*opt_c_, (dir / "optim_C.pt").string());
  {
    std::ifstream in(dir / "rng.txt");
    if (!(in >> rng_)) throw Error("checkpoint_format", "cannot read rng.txt");
  }
  set_cpu_rng_state(read_tensor_dict(dir / "torch_rng.pt").at("cpu"));
  iteration_ = meta.iteration;
  best_val_ = meta.best_val_accuracy;
  classifier_pretrained_ = meta.classifier_pretrained;
}

// ---------------------------------------------------------------- metrics

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw Error("io", "cannot open metrics log " + path.string());
}

void MetricsLog::write(const nlohmann::json& record) {
  out_ << record.dump() << "\n";
  out_.flush();
}

void MetricsLog::step(const StepReport& r) {
  const auto step = r.iteration + 1;
  const auto& g = r.generator;
  write({{"step", step},
         {"phase", "G"},
         {"latent", g.terms.latent},
         {"adversarial", g.terms.adversarial},
         {"aux_cls", g.terms.aux_cls},
         {"perceptual", g.terms.perceptual},
         {"total", g.total},
         {"lr", r.lr}});
  write({{"step", step},
         {"phase", "DC"},
         {"aux_cls", r.critic.aux_cls},
         {"adversarial", r.critic.adversarial},
         {"total", r.critic.total},
         {"lr", r.lr}});
}

// ---------------------------------------------------------------- fit

double pretrain_classifier(Trainer& trainer, PatchSampler& sampler, MetricsLog* log) {
  const auto& t = trainer.config().train;
  std::vector<double> recent;
  for (int64_t i = 0; i < t.pretrain_c_iters; ++i) {
    auto batch = sampler.next(t.batch_size, trainer.rng());
    const double loss = trainer.pretrain_classifier_step(batch);
    recent.push_back(loss);
    if (recent.size() > 10) recent.erase(recent.begin());
    if (log) log->write({{"step", i + 1}, {"phase", "pretrain_C"}, {"aux_cls", loss}, {"lr", t.lr}});
    if ((i + 1) % 100 == 0) log::info("pretrain C ", i + 1, "/", t.pretrain_c_iters, " loss ", loss);
  }
  trainer.mark_classifier_pretrained();
  if (recent.empty()) return 0.0;
  return std::accumulate(recent.begin(), recent.end(), 0.0) / static_cast<double>(recent.size());
}

namespace {

void require_splits(const DatasetManifest& manifest) {
  for (const auto& c : manifest.classes) {
    for (Split s : {Split::kTrain, Split::kVal}) {
      if (c.files(s).empty()) {
        throw Error("empty_split", "empty split: class '" + c.label.name + "' has no " +
                                       to_string(s) + " files");
      }
    }
  }
  manifest.real_label();
}

}  // namespace

FitResult fit(const DatasetManifest& manifest, const RunConfig& config, const FitOptions& options) {
  config.validate();
  require_splits(manifest);
  const auto labels = training_labels(manifest, config.train.task);
  const auto label_map = label_mapping(manifest, labels, config.train.task);
  const auto train_policy =
      config.patch_policy(manifest.native_resolution, manifest.resize_to, CropMode::kTrain);
  auto eval_policy = train_policy;
  eval_policy.mode = CropMode::kEval;

  std::filesystem::create_directories(options.out_dir);
  config.save(options.out_dir / "config.json");
  log::info("seed ", config.train.seed);

  Trainer trainer(config, labels);
  if (options.resume) {
    trainer.restore(*options.resume);
    log::info("resumed from ", options.resume->string(), " at iteration ", trainer.iteration());
  }
  PatchSampler sampler(manifest, Split::kTrain, train_policy, label_map);
  MetricsLog log(options.out_dir / "metrics.jsonl", options.resume.has_value());

  const auto& t = config.train;
  if (t.weights.use_aux_cls && !trainer.classifier_pretrained()) {
    pretrain_classifier(trainer, sampler, &log);
  }

  FitResult result;
  const auto ckpt_root = options.out_dir / "checkpoints";
  result.final_checkpoint = ckpt_root / "latest";
  result.best_checkpoint = ckpt_root / "best";

  while (trainer.iteration() < t.max_iters) {
    auto batch = sampler.next(t.batch_size, trainer.rng());
    const auto report = trainer.train_step(batch);
    log.step(report);
    if (options.on_step) options.on_step(report);
    const int64_t it = trainer.iteration();
    if (it % 50 == 0) {
      const auto& g = report.generator;
      log::info("iter ", it, " lr ", report.lr, " G ", g.total, " (z ", g.terms.latent, " adv ",
                g.terms.adversarial, " cls ", g.terms.aux_cls, " per ", g.terms.perceptual,
                ") DC ", report.critic.total);
    }
    if (it % t.val_every == 0 || it == t.max_iters) {
      auto r = evaluate_networks(*trainer.networks().generator, *trainer.networks().head, manifest,
                                 Split::kVal, eval_policy, labels, t.task, EvalMode::kClosed);
      log.write({{"step", it}, {"phase", "val"}, {"accuracy", r.overall_accuracy}});
      log::info("iter ", it, " val accuracy ", r.overall_accuracy);
      if (r.overall_accuracy > trainer.best_val_accuracy()) {
        trainer.set_best_val_accuracy(r.overall_accuracy);
        trainer.save(result.best_checkpoint, eval_policy);
      }
    }
    if (it % t.checkpoint_every == 0 || it == t.max_iters) {
      trainer.save(result.final_checkpoint, eval_policy);
    }
  }
  if (!std::filesystem::exists(result.final_checkpoint)) {
    trainer.save(result.final_checkpoint, eval_policy);
  }
  if (!std::filesystem::exists(result.best_checkpoint)) {
    trainer.save(result.best_checkpoint, eval_policy);
  }
  result.best_val_accuracy = trainer.best_val_accuracy();
  result.iterations = trainer.iteration();
  return result;
}

}  // namespace gfd
