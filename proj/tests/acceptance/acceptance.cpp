// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   gfd_acceptance --work DIR [--only 1,3,7]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gfd/analysis.hpp"
#include "gfd/error.hpp"
#include "gfd/image_io.hpp"
#include "gfd/inference.hpp"
#include "gfd/log.hpp"
#include "gfd/losses.hpp"
#include "gfd/toy.hpp"
#include "gfd/training.hpp"
#include "unit/gradcheck.hpp"
#include "unit/helpers.hpp"
#include "unit/oracles.hpp"

using namespace gfd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

fs::path g_work;

// ---------------------------------------------------------------- 1, 2

struct ToyRun {
  fs::path manifest;
  fs::path checkpoint;
  double seconds = 0.0;
  int64_t iterations = 0;
};

const ToyRun& toy_run() {
  static const ToyRun run = [] {
    ToyRun r;
    r.manifest = write_toy_dataset(g_work / "toy");
    const auto manifest = load_manifest(r.manifest);
    const auto cfg = toy_run_config();
    const auto start = std::chrono::steady_clock::now();
    auto result = fit(manifest, cfg, {g_work / "toy_run", std::nullopt, {}});
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.iterations = result.iterations;
    r.checkpoint = result.final_checkpoint;
    return r;
  }();
  return run;
}

Outcome toy_attribution() {
  const auto& run = toy_run();
  auto model = load_model(run.checkpoint);
  auto report = evaluate(model, load_manifest(run.manifest), EvalMode::kClosed);
  const bool pass = run.iterations <= 2000 && report.overall_accuracy >= 0.95 && run.seconds <= 3 * 3600;
  return {pass, "test accuracy " + fmt(report.overall_accuracy) + " (>= 0.95) after " +
                    std::to_string(run.iterations) + " iterations (<= 2000), " + fmt(run.seconds, 5) +
                    " s on CPU (<= 10800)"};
}

torch::Tensor dc_removed(const torch::Tensor& x) {
  auto t = x.to(torch::kFloat64);
  return (t - t.mean({1, 2}, true)).flatten();
}

double pearson(const torch::Tensor& a, const torch::Tensor& b) {
  // Both already zero-mean per channel, hence zero-mean overall.
  return (a.dot(b) / (a.norm() * b.norm())).item<double>();
}

Outcome fingerprint_recovery() {
  const auto& run = toy_run();
  auto model = load_model(run.checkpoint);
  const auto manifest = load_manifest(run.manifest);
  const auto policy = model.eval_policy();

  std::vector<std::vector<torch::Tensor>> fps(manifest.classes.size());
  std::ostringstream detail;
  bool pass = true;
  for (size_t k = 0; k < manifest.classes.size(); ++k) {
    const auto& cls = manifest.classes[k];
    torch::Tensor planted;
    int source = 0;
    if (!cls.label.is_real) {
      source = std::stoi(cls.label.name.substr(4));  // "fakeN"
      const auto native = toy_pattern(source, manifest.native_resolution, 0.05);
      const auto off = center_offset(native.size(1), native.size(2), policy.crop);
      planted = dc_removed(native.slice(1, off.row, off.row + policy.crop)
                               .slice(2, off.col, off.col + policy.crop));
    }
    double sum = 0;
    for (const auto& path : cls.test) {
      auto fp = dc_removed(extract_fingerprint(model, read_image(path)).residual());
      if (planted.defined()) sum += pearson(fp, planted);
      fps[k].push_back(fp / fp.norm());
    }
    if (planted.defined()) {
      const double mean = sum / static_cast<double>(cls.test.size());
      pass = pass && mean >= 0.5;
      detail << cls.label.name << " pearson " << fmt(mean) << " (>= 0.5); ";
    }
  }
  // Cosine over every pair of test fingerprints, grouped by source.
  double within = 0, across = 0;
  int64_t n_within = 0, n_across = 0;
  for (size_t a = 0; a < fps.size(); ++a) {
    auto A = torch::stack(fps[a]);
    for (size_t b = a; b < fps.size(); ++b) {
      auto sims = torch::mm(A, torch::stack(fps[b]).t());
      if (a == b) {
        const auto n = sims.size(0);
        within += (sims.sum() - sims.diagonal().sum()).item<double>() / 2;
        n_within += n * (n - 1) / 2;
      } else {
        across += sims.sum().item<double>();
        n_across += sims.numel();
      }
    }
  }
  within /= static_cast<double>(n_within);
  across /= static_cast<double>(n_across);
  pass = pass && within - across >= 0.2;
  detail << "cosine within " << fmt(within) << " across " << fmt(across) << " gap "
         << fmt(within - across) << " (>= 0.2)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------- 3

Outcome gradient_suite() {
  double worst = -1;
  std::string worst_term;
  int64_t excluded = 0, coordinates = 0;
  bool excluded_ok = true;
  for (const auto& c : testing::loss_gradient_suite(17)) {
    const double e = std::isfinite(c.result.relative_error) ? c.result.relative_error : INFINITY;
    if (e > worst) {
      worst = e;
      worst_term = c.term;
    }
    excluded += c.result.excluded;
    coordinates += c.result.coordinates;
    excluded_ok = excluded_ok && c.result.excluded * 20 <= c.result.coordinates;
  }
  return {worst <= 1e-4 && excluded_ok,
          "worst relative error " + fmt(worst, 3) + " (" + worst_term + ", <= 1e-4); " +
              std::to_string(excluded) + "/" + std::to_string(coordinates) +
              " coordinates excluded for a stencil across a ReLU/pool kink (<= 5% per term)"};
}

// ---------------------------------------------------------------- 4

using Snapshot = std::vector<torch::Tensor>;

Snapshot snapshot(torch::nn::Module& m) {
  Snapshot s;
  for (const auto& p : m.parameters()) s.push_back(p.detach().clone());
  return s;
}

bool same(torch::nn::Module& m, const Snapshot& s) {
  auto params = m.parameters();
  for (size_t i = 0; i < params.size(); ++i) {
    if (!torch::equal(params[i], s[i])) return false;
  }
  return true;
}

Outcome alternation_invariants() {
  const auto manifest = load_manifest(testing::tiny_toy());
  const auto cfg = testing::tiny_config();
  const auto labels = training_labels(manifest, Task::kAttribution);
  Trainer t(cfg, labels);
  auto& n = t.networks();
  auto policy = cfg.patch_policy(manifest.native_resolution, manifest.resize_to, CropMode::kTrain);
  PatchSampler sampler(manifest, Split::kTrain, policy,
                       label_mapping(manifest, labels, Task::kAttribution));
  Snapshot g, h, d, c, f;
  int violations = 0, checks = 0;
  t.set_phase_hook([&](Trainer::Phase phase) {
    ++checks;
    if (phase == Trainer::Phase::kGenerator) {
      if (!same(*n.discriminator, d) || !same(*n.classifier, c) || !same(*n.perceptual, f)) ++violations;
      g = snapshot(*n.generator);
      h = snapshot(*n.head);
    } else if (!same(*n.generator, g) || !same(*n.head, h)) {
      ++violations;
    }
  });
  for (int step = 0; step < 100; ++step) {
    d = snapshot(*n.discriminator);
    c = snapshot(*n.classifier);
    f = snapshot(*n.perceptual);
    t.train_step(sampler.next(cfg.train.batch_size, t.rng()));
  }
  return {violations == 0 && checks == 200,
          std::to_string(checks) + " phase checks over 100 steps, " + std::to_string(violations) +
              " violations"};
}

// ---------------------------------------------------------------- 5

Outcome scheduler_exactness() {
  TrainConfig t;  // lr 1e-4, gamma 0.9, step 500
  const std::vector<std::pair<int64_t, double>> expected = {
      {0, 1e-4}, {499, 1e-4}, {500, 9e-5}, {1000, 8.1e-5}};
  bool pass = true;
  std::ostringstream detail;
  for (auto [it, lr] : expected) {
    const double got = learning_rate_at(t, it);
    pass = pass && got == lr;
    detail << "lr(" << it << ")=" << fmt(got, 17) << " ";
  }
  // The optimizers hold the same value during step t.
  const auto manifest = load_manifest(testing::tiny_toy());
  auto cfg = testing::tiny_config();
  cfg.train.lr = 1e-4;
  cfg.train.gamma = 0.9;
  cfg.train.step_size = 500;
  cfg.train.weights.use_perceptual = false;
  const auto labels = training_labels(manifest, Task::kAttribution);
  Trainer trainer(cfg, labels);
  auto policy = cfg.patch_policy(manifest.native_resolution, manifest.resize_to, CropMode::kTrain);
  PatchSampler sampler(manifest, Split::kTrain, policy,
                       label_mapping(manifest, labels, Task::kAttribution));
  for (auto [it, lr] : expected) {
    trainer.set_iteration(it);
    auto r = trainer.train_step(sampler.next(3, trainer.rng()));
    pass = pass && r.lr == lr && trainer.optimizer_lr() == lr;
  }
  detail << "(optimizer lr checked at the same steps)";
  return {pass, detail.str()};
}

// ---------------------------------------------------------------- 6

Outcome loss_arithmetic() {
  const auto r = total_G({1, 1, 1, 1}, LossWeights::attribution_defaults());
  const double ce =
      cross_entropy(torch::zeros({1, 5}, torch::kFloat64), torch::tensor({int64_t{2}})).item<double>();
  const bool pass = r.total == 12.1 && std::abs(ce - std::log(5.0)) <= 1e-6;
  return {pass, "total_G " + fmt(r.total, 17) + " (== 12.1), CE uniform/5 " + fmt(ce, 12) +
                    " (ln 5 = " + fmt(std::log(5.0), 12) + ")"};
}

// ---------------------------------------------------------------- 7

Outcome glcm_oracle() {
  GlcmConfig cfg;
  std::mt19937_64 rng(50);
  int64_t mismatches = 0, comparisons = 0;
  for (int i = 0; i < 50; ++i) {
    auto q = testing::random_quantized(rng, 32, 32, cfg.levels);
    for (int d : cfg.distances) {
      for (double theta : cfg.angles) {
        const auto off = glcm_offset(d, theta);
        ++comparisons;
        if (glcm(q, d, theta, cfg.symmetric).p != testing::brute_force_glcm(q, off.drow, off.dcol, cfg.symmetric)) {
          ++mismatches;
        }
      }
    }
  }
  std::uniform_real_distribution<double> u(0, 1);
  int out_of_range = 0, evaluated = 0;
  for (int i = 0; i < 1000; ++i) {
    GlcmMatrix m{6, std::vector<double>(36)};
    double s = 0;
    for (auto& v : m.p) s += (v = u(rng));
    for (auto& v : m.p) v /= s;
    const double c = glcm_correlation(m);
    ++evaluated;
    if (!(c >= -1.0 && c <= 1.0)) ++out_of_range;
  }
  const double stripe = fingerprint_correlation_vector(testing::stripes(64, true, 6), cfg)[0];
  const bool pass = mismatches == 0 && comparisons == 800 && out_of_range == 0 && stripe >= 0.95;
  return {pass, std::to_string(comparisons - mismatches) + "/" + std::to_string(comparisons) +
                    " exact matches, " + std::to_string(evaluated - out_of_range) + "/" +
                    std::to_string(evaluated) + " correlations in [-1, 1], stripe C(d=2, theta=0) " +
                    fmt(stripe) + " (>= 0.95)"};
}

// ---------------------------------------------------------------- 8

Outcome ablation_plumbing() {
  const auto manifest = load_manifest(testing::tiny_toy());
  bool pass = true;
  std::ostringstream detail;
  for (Ablation a : {Ablation::kG, Ablation::kGD, Ablation::kGC, Ablation::kGDC, Ablation::kFull}) {
    auto cfg = testing::tiny_config();
    cfg.train.max_iters = 30;
    cfg.train.pretrain_c_iters = 5;
    cfg.train.val_every = 15;
    cfg.train.checkpoint_every = 15;
    cfg.train.weights = with_ablation(cfg.train.weights, a);
    const auto& w = cfg.train.weights;
    const auto out = g_work / ("ablation_" + to_string(a));
    fs::remove_all(out);
    auto result = fit(manifest, cfg, {out, std::nullopt, {}});
    bool ok = result.iterations == 30 && fs::exists(result.final_checkpoint / "checkpoint.json");
    std::ifstream in(out / "metrics.jsonl");
    std::string line;
    int g_lines = 0;
    while (std::getline(in, line)) {
      auto j = nlohmann::json::parse(line);
      if (j["phase"] == "G") {
        ++g_lines;
        ok = ok && j["latent"].get<double>() > 0;
        ok = ok && (j["adversarial"].get<double>() == 0.0) == !w.use_adversarial;
        ok = ok && (j["aux_cls"].get<double>() == 0.0) == !w.use_aux_cls;
        ok = ok && (j["perceptual"].get<double>() == 0.0) == !w.use_perceptual;
      } else if (j["phase"] == "DC") {
        ok = ok && (j["adversarial"].get<double>() == 0.0) == !w.use_adversarial;
        ok = ok && (j["aux_cls"].get<double>() == 0.0) == !w.use_aux_cls;
      }
    }
    ok = ok && g_lines == 30;
    pass = pass && ok;
    detail << to_string(a) << (ok ? " ok " : " BAD ");
  }
  return {pass, detail.str() + "(30 iterations each, disabled terms logged as exactly 0)"};
}

// ---------------------------------------------------------------- 9

bool same_report(const StepReport& a, const StepReport& b) {
  const auto& x = a.generator;
  const auto& y = b.generator;
  return a.lr == b.lr && x.total == y.total && x.terms.latent == y.terms.latent &&
         x.terms.adversarial == y.terms.adversarial && x.terms.aux_cls == y.terms.aux_cls &&
         x.terms.perceptual == y.terms.perceptual && a.critic.total == b.critic.total &&
         a.critic.aux_cls == b.critic.aux_cls && a.critic.adversarial == b.critic.adversarial;
}

Outcome determinism() {
  const auto manifest = load_manifest(testing::tiny_toy());
  const auto cfg = testing::tiny_config();
  const auto labels = training_labels(manifest, Task::kAttribution);
  auto policy = cfg.patch_policy(manifest.native_resolution, manifest.resize_to, CropMode::kTrain);
  const auto map = label_mapping(manifest, labels, Task::kAttribution);
  std::vector<StepReport> reports;
  std::vector<torch::Tensor> fps;
  auto probe = torch::rand({2, 3, 32, 32}) * 2 - 1;
  for (int run = 0; run < 2; ++run) {
    Trainer t(cfg, labels);
    PatchSampler sampler(manifest, Split::kTrain, policy, map);
    reports.push_back(t.train_step(sampler.next(cfg.train.batch_size, t.rng())));
    auto& g = *t.networks().generator;
    g.eval();
    torch::NoGradGuard ng;
    fps.push_back(g.forward(probe).fingerprint);
    fps.push_back(g.forward(probe).fingerprint);
  }
  const bool reports_equal = same_report(reports[0], reports[1]);
  bool forwards_equal = true;
  for (const auto& f : fps) forwards_equal = forwards_equal && testing::bitwise_equal(f, fps[0]);
  return {reports_equal && forwards_equal,
          std::string("iteration-1 reports ") + (reports_equal ? "identical" : "DIFFER") + " (G total " +
              fmt(reports[0].generator.total, 17) + "), eval forwards " +
              (forwards_equal ? "bitwise equal" : "DIFFER")};
}

// ---------------------------------------------------------------- 10

Outcome detection_topology() {
  bool pass = true;
  std::ostringstream detail;
  for (auto [backbone, arch] : {std::pair{Backbone::kResNet50, "resnet50"},
                                std::pair{Backbone::kDenseNet121, "densenet121"}}) {
    GeneratorConfig gcfg;
    gcfg.backbone = backbone;
    gcfg.num_classes = 2;
    Generator g(gcfg);
    ClassificationHead h(g->latent_channels(), 2);
    ClassifierConfig ccfg;
    ccfg.arch = arch;
    ccfg.num_classes = 2;
    SourceClassifier c(ccfg);
    const auto a = inference_path_manifest(*g, *h);
    const auto b = classifier_manifest(*c);
    int64_t count = 0;
    for (const auto& p : a) {
      int64_t n = 1;
      for (auto s : p.shape) n *= s;
      count += n;
    }
    const bool ok = a == b && !a.empty();
    pass = pass && ok;
    detail << to_string(backbone) << (ok ? " matches " : " DIFFERS from ") << arch << " (" << a.size()
           << " tensors, " << count << " parameters)";
    if (backbone == Backbone::kResNet50) detail << "; ";
  }
  return {pass, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  fs::create_directories(g_work);
  log::init("warn");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"toy closed-world attribution", toy_attribution},
      {"fingerprint recovery", fingerprint_recovery},
      {"gradient suite", gradient_suite},
      {"alternation invariants", alternation_invariants},
      {"scheduler exactness", scheduler_exactness},
      {"loss arithmetic", loss_arithmetic},
      {"glcm oracle", glcm_oracle},
      {"ablation plumbing", ablation_plumbing},
      {"determinism", determinism},
      {"detection-mode topology", detection_topology},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
