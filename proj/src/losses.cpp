#include "gfd/losses.hpp"

#include "gfd/error.hpp"

namespace gfd {
namespace F = torch::nn::functional;

LossWeights LossWeights::attribution_defaults() { return LossWeights{}; }

LossWeights LossWeights::detection_defaults() {
  LossWeights w;
  w.adversarial = 1e-2;
  return w;
}

void LossWeights::validate() const {
  for (double w : {latent, adversarial, aux_cls, perceptual}) {
    if (!(w >= 0.0)) throw Error("bad_config", "loss weights must be non-negative");
  }
}

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::kG: return "G";
    case Ablation::kGD: return "G+D";
    case Ablation::kGC: return "G+C";
    case Ablation::kGDC: return "G+D+C";
    case Ablation::kFull: return "G+D+C+P";
  }
  return "G+D+C+P";
}

Ablation ablation_from_string(const std::string& name) {
  if (name == "G") return Ablation::kG;
  if (name == "G+D") return Ablation::kGD;
  if (name == "G+C") return Ablation::kGC;
  if (name == "G+D+C") return Ablation::kGDC;
  if (name == "G+D+C+P" || name == "full") return Ablation::kFull;
  throw Error("bad_config", "unknown ablation '" + name + "'");
}

LossWeights with_ablation(LossWeights w, Ablation ablation) {
  w.use_adversarial = ablation == Ablation::kGD || ablation == Ablation::kGDC ||
                      ablation == Ablation::kFull;
  w.use_aux_cls = ablation == Ablation::kGC || ablation == Ablation::kGDC ||
                  ablation == Ablation::kFull;
  w.use_perceptual = ablation == Ablation::kFull;
  return w;
}

GeneratorLossReport total_G(const GeneratorTerms& terms, const LossWeights& w) {
  GeneratorLossReport r;
  r.terms.latent = terms.latent;
  r.terms.adversarial = w.use_adversarial ? terms.adversarial : 0.0;
  r.terms.aux_cls = w.use_aux_cls ? terms.aux_cls : 0.0;
  r.terms.perceptual = w.use_perceptual ? terms.perceptual : 0.0;
  r.total = w.latent * r.terms.latent;
  if (w.use_adversarial) r.total += w.adversarial * r.terms.adversarial;
  if (w.use_aux_cls) r.total += w.aux_cls * r.terms.aux_cls;
  if (w.use_perceptual) r.total += w.perceptual * r.terms.perceptual;
  return r;
}

CriticLossReport total_DC(double aux_cls, double adversarial) {
  return {aux_cls, adversarial, aux_cls + adversarial};
}

torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2) throw Error("bad_shape", "logits must be [B, K]");
  if (labels.numel() != logits.size(0)) throw Error("bad_shape", "one label per row expected");
  if (labels.numel() > 0 &&
      (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= logits.size(1))) {
    throw Error("label_out_of_range", "label index outside [0, " +
                                          std::to_string(logits.size(1)) + ")");
  }
  return F::cross_entropy(logits, labels.to(torch::kLong));
}

torch::Tensor loss_latent_cls(ClassificationHeadImpl& head, const torch::Tensor& latent,
                              const torch::Tensor& labels) {
  return cross_entropy(head.forward(latent), labels);
}

torch::Tensor loss_aux_cls_G(SourceClassifierImpl& classifier, const torch::Tensor& x_fp,
                             const torch::Tensor& origin_labels) {
  return cross_entropy(classifier.forward(x_fp), origin_labels);
}

torch::Tensor loss_aux_cls_C(SourceClassifierImpl& classifier, const torch::Tensor& images,
                             const torch::Tensor& labels) {
  return cross_entropy(classifier.forward(images), labels);
}

torch::Tensor adversarial_d_loss(const torch::Tensor& real_scores, const torch::Tensor& fp_scores) {
  auto real_term = F::binary_cross_entropy_with_logits(real_scores, torch::ones_like(real_scores));
  auto fp_term = F::binary_cross_entropy_with_logits(fp_scores, torch::zeros_like(fp_scores));
  return 0.5 * (real_term + fp_term);
}

torch::Tensor adversarial_g_loss(const torch::Tensor& fp_scores) {
  return F::softplus(-fp_scores).mean();
}

torch::Tensor loss_adv_D(PatchDiscriminatorImpl& discriminator, const torch::Tensor& x_real,
                         const torch::Tensor& x_fp) {
  return adversarial_d_loss(discriminator.forward(x_real), discriminator.forward(x_fp));
}

torch::Tensor loss_adv_G(PatchDiscriminatorImpl& discriminator, const torch::Tensor& x_fp) {
  return adversarial_g_loss(discriminator.forward(x_fp));
}

namespace {

torch::Tensor unit_normalize(const torch::Tensor& f) {
  auto flat = f.flatten(1);
  auto norm = flat.norm(2, {1}, /*keepdim=*/true).clamp_min(1e-10);
  return flat / norm;
}

}  // namespace

torch::Tensor perceptual_distance(const std::vector<torch::Tensor>& a,
                                  const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size() || a.empty()) throw Error("bad_shape", "tap lists differ");
  torch::Tensor total;
  for (size_t i = 0; i < a.size(); ++i) {
    auto d = (unit_normalize(a[i]) - unit_normalize(b[i])).square().sum(1).mean();
    total = total.defined() ? total + d : d;
  }
  return total;
}

torch::Tensor loss_perceptual(PerceptualExtractorImpl& extractor, const torch::Tensor& x_fp,
                              const torch::Tensor& x_real) {
  return perceptual_distance(extractor.forward(x_fp), extractor.forward(x_real));
}

}  // namespace gfd
