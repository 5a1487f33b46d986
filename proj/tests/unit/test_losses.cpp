#include <doctest.h>

#include <cmath>

#include "gfd/error.hpp"
#include "gfd/losses.hpp"
#include "unit/gradcheck.hpp"
#include "unit/helpers.hpp"

using namespace gfd;

namespace {

double value(const torch::Tensor& t) { return t.item<double>(); }

const torch::TensorOptions kF64 = torch::TensorOptions().dtype(torch::kFloat64);

}  // namespace

TEST_CASE("cross entropy reference values") {
  auto y0 = torch::tensor({int64_t{0}});
  CHECK(value(cross_entropy(torch::zeros({1, 5}, kF64), y0)) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(value(cross_entropy(torch::ones({1, 2}, kF64), y0)) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    auto logits = torch::zeros({1, 3}, kF64);
    logits[0][0] = margin;
    const double l = value(cross_entropy(logits, y0));
    CHECK(l < previous);
    previous = l;
  }
  CHECK(previous < 1e-20);
  try {
    cross_entropy(torch::zeros({1, 3}), torch::tensor({int64_t{3}}));
    FAIL("expected label_out_of_range");
  } catch (const Error& e) {
    CHECK(e.code() == "label_out_of_range");
  }
}

TEST_CASE("adversarial losses at 0-logit and saturation") {
  auto zero = torch::zeros({2, 1, 4, 4}, kF64);
  CHECK(value(adversarial_d_loss(zero, zero)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(value(adversarial_g_loss(zero)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto big = torch::full({2, 1, 4, 4}, 50.0, kF64);
  CHECK(value(adversarial_d_loss(big, -big)) < 1e-20);
  CHECK(value(adversarial_g_loss(big)) < 1e-20);
}

TEST_CASE("perceptual distance: zero on identical inputs, symmetric") {
  PerceptualConfig cfg;
  cfg.base_channels = 4;
  PerceptualExtractor f(cfg);
  auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
  auto y = torch::rand({2, 3, 16, 16}) * 2 - 1;
  CHECK(value(loss_perceptual(*f, x, x)) == 0.0);
  CHECK(value(loss_perceptual(*f, x, y)) ==
        doctest::Approx(value(loss_perceptual(*f, y, x))).epsilon(1e-6));
  CHECK(value(loss_perceptual(*f, x, y)) > 0.0);
}

TEST_CASE("classifier losses: uniform and perfect predictions") {
  // A classifier whose fc is zero outputs uniform logits.
  ClassifierConfig cfg;
  cfg.arch = "resnet10";
  cfg.width = 8;
  cfg.num_classes = 5;
  SourceClassifier c(cfg);
  c->eval();
  for (auto& item : c->named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    if (name.rfind("fc.", 0) == 0) p.data().zero_();
  }
  auto x = torch::rand({3, 3, 32, 32}) * 2 - 1;
  auto y = torch::tensor({int64_t{0}, int64_t{3}, int64_t{4}});
  CHECK(value(loss_aux_cls_G(*c, x, y)) == doctest::Approx(std::log(5.0)).epsilon(1e-6));
  // Huge bias on the true class: loss goes to 0.
  for (auto& item : c->named_parameters()) {
    const auto& name = item.key();
    auto& p = item.value();
    if (name == "fc.bias") p.data()[2] = 100.0;
  }
  auto y2 = torch::full({3}, 2, torch::kLong);
  CHECK(value(loss_aux_cls_G(*c, x, y2)) < 1e-30);
}

TEST_CASE("total_G and total_DC arithmetic") {
  const GeneratorTerms ones{1, 1, 1, 1};
  auto r = total_G(ones, LossWeights::attribution_defaults());
  CHECK(r.total == 12.1);

  auto det = LossWeights::detection_defaults();
  CHECK(det.latent == 10.0);
  CHECK(det.adversarial == 0.01);
  CHECK(det.aux_cls == 1.0);
  CHECK(det.perceptual == 1.0);
  auto att = LossWeights::attribution_defaults();
  CHECK(att.adversarial == 0.1);

  CHECK(total_DC(1, 1).total == 2.0);
  CHECK(total_DC(0, 0.375).total == 0.375);

  // Independent recomputation of each weighted term.
  const GeneratorTerms t{0.3, 1.7, 0.25, 2.5};
  const auto rep = total_G(t, att);
  CHECK(rep.total == doctest::Approx(10 * 0.3 + 0.1 * 1.7 + 0.25 + 2.5).epsilon(1e-15));
}

TEST_CASE("ablations disable exactly their terms") {
  const GeneratorTerms t{1, 2, 3, 4};
  struct Case {
    Ablation a;
    bool adv, cls, per;
  };
  for (auto c : {Case{Ablation::kG, false, false, false}, Case{Ablation::kGD, true, false, false},
                 Case{Ablation::kGC, false, true, false}, Case{Ablation::kGDC, true, true, false},
                 Case{Ablation::kFull, true, true, true}}) {
    auto w = with_ablation(LossWeights::attribution_defaults(), c.a);
    CHECK(w.use_adversarial == c.adv);
    CHECK(w.use_aux_cls == c.cls);
    CHECK(w.use_perceptual == c.per);
    auto r = total_G(t, w);
    CHECK(r.terms.latent == 1.0);
    CHECK((r.terms.adversarial == 0.0) == !c.adv);
    CHECK((r.terms.aux_cls == 0.0) == !c.cls);
    CHECK((r.terms.perceptual == 0.0) == !c.per);
    CHECK(ablation_from_string(to_string(c.a)) == c.a);
  }
  CHECK(ablation_from_string("full") == Ablation::kFull);
  CHECK(ablation_from_string("G+D+C+P") == Ablation::kFull);
}

TEST_CASE("every loss is finite and non-negative on random inputs") {
  torch::manual_seed(9);
  PerceptualConfig pcfg;
  pcfg.base_channels = 4;
  PerceptualExtractor f(pcfg);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = torch::randn({4, 3}) * 10;
    auto y = torch::randint(0, 3, {4}, torch::kLong);
    auto s1 = torch::randn({4, 1, 3, 3}) * 10;
    auto s2 = torch::randn({4, 1, 3, 3}) * 10;
    auto x = torch::rand({2, 3, 16, 16}) * 2 - 1;
    auto z = torch::rand({2, 3, 16, 16}) * 2 - 1;
    for (double l : {value(cross_entropy(logits, y)), value(adversarial_d_loss(s1, s2)),
                     value(adversarial_g_loss(s1)), value(loss_perceptual(*f, x, z))}) {
      CHECK(std::isfinite(l));
      CHECK(l >= 0.0);
    }
  }
}

TEST_CASE("gradients match central finite differences") {
  for (const auto& check : testing::loss_gradient_suite(17)) {
    INFO(check.term << " relative error " << check.result.relative_error);
    CHECK(check.result.relative_error <= 1e-4);
    CHECK(check.result.analytic_norm > 0.0);
    // Stencils straddling a kink are rare; a large share would hollow out the check.
    CHECK(check.result.excluded * 20 <= check.result.coordinates);
  }
}

TEST_CASE("gradients: other seeds and a finer step") {
  for (uint64_t seed : {18, 19}) {
    for (const auto& check : testing::loss_gradient_suite(seed)) {
      INFO(seed << " " << check.term);
      CHECK(check.result.relative_error <= 1e-4);
    }
  }
  // At step 1e-4 no stencil on seed 17 meets a kink.
  for (const auto& check : testing::loss_gradient_suite(17, 1e-4)) {
    INFO(check.term);
    CHECK(check.result.excluded == 0);
    CHECK(check.result.relative_error <= 1e-6);
  }
}

TEST_CASE("loss weight validation") {
  LossWeights w;
  w.latent = -1;
  CHECK_THROWS_AS(w.validate(), Error);
  CHECK_THROWS_AS(ablation_from_string("G+X"), Error);
}

