#pragma once

#include <string>

#include <torch/torch.h>

#include "gfd/networks.hpp"

namespace gfd {

/// Generator-objective weights. A disabled term contributes exactly zero and
/// is never evaluated, so its network gets no gradient.
struct LossWeights {
  double latent = 10.0;       // w1, latent classification (head on z)
  double adversarial = 0.1;   // w2
  double aux_cls = 1.0;       // w3, auxiliary classifier on x_fp
  double perceptual = 1.0;    // w4
  bool use_adversarial = true;
  bool use_aux_cls = true;
  bool use_perceptual = true;

  static LossWeights attribution_defaults();
  static LossWeights detection_defaults();
  void validate() const;
};

/// Ablation variants: generator-with-head baseline plus discriminator,
/// auxiliary classifier and perceptual term.
enum class Ablation { kG, kGD, kGC, kGDC, kFull };

std::string to_string(Ablation ablation);
Ablation ablation_from_string(const std::string& name);
LossWeights with_ablation(LossWeights weights, Ablation ablation);

struct GeneratorTerms {
  double latent = 0, adversarial = 0, aux_cls = 0, perceptual = 0;
};

struct GeneratorLossReport {
  GeneratorTerms terms;
  double total = 0;
};

struct CriticLossReport {
  double aux_cls = 0;      // classifier on the input images
  double adversarial = 0;  // discriminator
  double total = 0;
};

/// w1*latent + w2*adversarial + w3*aux_cls + w4*perceptual over enabled terms;
/// disabled terms are reported as 0.
GeneratorLossReport total_G(const GeneratorTerms& terms, const LossWeights& weights);
CriticLossReport total_DC(double aux_cls, double adversarial);

/// Mean cross-entropy; labels must lie in [0, logits.size(1)).
torch::Tensor cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels);

torch::Tensor loss_latent_cls(ClassificationHeadImpl& head, const torch::Tensor& latent,
                              const torch::Tensor& labels);
/// C frozen by the caller; gradients reach x_fp (and so G).
torch::Tensor loss_aux_cls_G(SourceClassifierImpl& classifier, const torch::Tensor& x_fp,
                             const torch::Tensor& origin_labels);
torch::Tensor loss_aux_cls_C(SourceClassifierImpl& classifier, const torch::Tensor& images,
                             const torch::Tensor& labels);

/// BCE on the patch-score grids, real -> 1 and fingerprinted -> 0, each side
/// averaged over patches and batch, then the two sides averaged.
torch::Tensor adversarial_d_loss(const torch::Tensor& real_scores, const torch::Tensor& fp_scores);
/// Non-saturating: -mean log sigmoid(D(x_fp)).
torch::Tensor adversarial_g_loss(const torch::Tensor& fp_scores);

torch::Tensor loss_adv_D(PatchDiscriminatorImpl& discriminator, const torch::Tensor& x_real,
                         const torch::Tensor& x_fp);
torch::Tensor loss_adv_G(PatchDiscriminatorImpl& discriminator, const torch::Tensor& x_fp);

/// Sum over taps of the squared L2 distance between per-sample unit-normalized
/// feature maps, averaged over the batch. Symmetric in its arguments.
torch::Tensor perceptual_distance(const std::vector<torch::Tensor>& a,
                                  const std::vector<torch::Tensor>& b);
torch::Tensor loss_perceptual(PerceptualExtractorImpl& extractor, const torch::Tensor& x_fp,
                              const torch::Tensor& x_real);

}  // namespace gfd
