#include <doctest.h>

#include <cmath>
#include <fstream>

#include "gfd/config.hpp"
#include "gfd/error.hpp"
#include "gfd/toy.hpp"
#include "unit/helpers.hpp"

using namespace gfd;

namespace {

std::string error_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

}  // namespace

TEST_CASE("training defaults") {
  TrainConfig t;
  CHECK(t.lr == 1e-4);
  CHECK(t.gamma == 0.9);
  CHECK(t.step_size == 500);
  CHECK(t.beta1 == 0.9);
  CHECK(t.beta2 == 0.999);
  CHECK(t.pretrain_c_iters == 1000);
  CHECK(t.seed == 0);
  CHECK(t.weights.latent == 10.0);
  CHECK(t.weights.adversarial == 0.1);
  CHECK(t.weights.aux_cls == 1.0);
  CHECK(t.weights.perceptual == 1.0);
}

TEST_CASE("scheduler values") {
  TrainConfig t;
  CHECK(learning_rate_at(t, 0) == 1e-4);
  CHECK(learning_rate_at(t, 499) == 1e-4);
  CHECK(learning_rate_at(t, 500) == 1e-4 * 0.9);
  CHECK(learning_rate_at(t, 1000) == 1e-4 * (0.9 * 0.9));
  CHECK(learning_rate_at(t, 500) == doctest::Approx(9e-5).epsilon(1e-14));
  CHECK(learning_rate_at(t, 1000) == doctest::Approx(8.1e-5).epsilon(1e-14));
  // Piecewise constant and non-increasing.
  double last = 1;
  for (int64_t it = 0; it < 5000; it += 37) {
    const double lr = learning_rate_at(t, it);
    CHECK(lr <= last);
    CHECK(lr == learning_rate_at(t, (it / 500) * 500));
    last = lr;
  }
}

TEST_CASE("config json round trip and unknown keys") {
  auto c = toy_run_config();
  c.train.seed = 17;
  c.train.weights.use_perceptual = false;
  auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  auto doc = c.to_json();
  doc["train"]["learning_rate"] = 1;
  CHECK(error_code([&] { RunConfig::from_json(doc); }) == "bad_config");
  doc = c.to_json();
  doc["extras"] = 1;
  CHECK(error_code([&] { RunConfig::from_json(doc); }) == "bad_config");
  doc = c.to_json();
  doc["train"]["lr"] = "fast";
  CHECK(error_code([&] { RunConfig::from_json(doc); }) == "bad_config");
}

TEST_CASE("precedence: defaults < file < overrides") {
  auto dir = testing::scratch("config");
  std::ofstream(dir / "c.json") << R"({"train": {"lr": 0.001, "batch_size": 4}})";
  auto c = RunConfig::load(dir / "c.json");
  CHECK(c.train.lr == 0.001);
  CHECK(c.train.batch_size == 4);
  CHECK(c.train.gamma == 0.9);
  c.apply_override("train.batch_size=8");
  c.apply_override("classifier.arch=resnet18");
  c.apply_override("device=cpu");
  CHECK(c.train.batch_size == 8);
  CHECK(c.train.lr == 0.001);
  CHECK(c.classifier.arch == "resnet18");
  CHECK(error_code([&] { c.apply_override("nonsense"); }) == "bad_config");
  CHECK(error_code([&] { c.apply_override("train.nonsense=1"); }) == "bad_config");
  CHECK(error_code([&] { c.apply_override("tarin.lr=1"); }) == "bad_config");
  CHECK(error_code([&] { RunConfig::load(dir / "missing.json"); }) != "");
}

TEST_CASE("task and ablation selection") {
  RunConfig c;
  c.apply_override("train.task=detection");
  CHECK(c.train.task == Task::kDetection);
  CHECK(c.train.weights.adversarial == 0.01);
  auto doc = c.to_json();
  doc["ablation"] = "G+C";
  auto a = RunConfig::from_json(doc);
  CHECK_FALSE(a.train.weights.use_adversarial);
  CHECK(a.train.weights.use_aux_cls);
  CHECK_FALSE(a.train.weights.use_perceptual);
}

TEST_CASE("validation before work starts") {
  RunConfig c;
  c.patch.crop = 100;  // not divisible by 2^5
  CHECK(error_code([&] { c.validate(); }) == "bad_config");
  c = RunConfig{};
  c.device = "tpu";
  CHECK(error_code([&] { c.validate(); }) == "bad_config");
  c = RunConfig{};
  c.train.gamma = 1.5;
  CHECK(error_code([&] { c.validate(); }) == "bad_config");
  CHECK_NOTHROW(toy_run_config().validate());
}

TEST_CASE("patch policy precedence") {
  RunConfig c;
  auto p = c.patch_policy(128, std::nullopt, CropMode::kEval);
  CHECK(p.resize_to == 512);
  p = c.patch_policy(256, std::nullopt, CropMode::kTrain);
  CHECK_FALSE(p.resize_to.has_value());
  CHECK(p.mode == CropMode::kTrain);
  p = c.patch_policy(128, 256, CropMode::kEval);
  CHECK(p.resize_to == 256);
  c.patch.resize_to = 300;
  p = c.patch_policy(128, 256, CropMode::kEval);
  CHECK(p.resize_to == 300);
}
