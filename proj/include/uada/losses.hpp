#ifndef UADA_LOSSES_HPP
#define UADA_LOSSES_HPP

// Objective terms of the joint translation + segmentation model.
//
// Conventions: expectations are batch means, L1 norms are per-element means,
// discriminator scores are already clamped to (0,1). Every S-side term has a
// T-side twin produced by the same code with the domains swapped.

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "uada/phantom_data.hpp"
#include "uada/segmentation_net.hpp"
#include "uada/translation_net.hpp"

namespace uada {

struct LossWeights {
    double gan = 1.0;
    double recon = 10.0;      // image self-reconstruction
    double content = 1.0;     // latent content reconstruction
    double style = 1.0;       // latent style reconstruction
    double cycle = 10.0;      // cross-cycle consistency
    double seg_synth = 1.0;   // segmentation on synthesized images (unweighted in the objective)
};

inline constexpr double kDiceSmooth = 1e-7;

enum class DiceMode {
    BatchGlobal,  // one ratio over every pixel of every pair in the batch
    PerImage,     // ratio per image, then averaged
};

/// -2 sum(p*y) / (sum(p^2) + sum(y^2) + 1e-7). Range [-1, 0].
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target,
                        DiceMode mode = DiceMode::BatchGlobal);

/// Sum of the dice loss on labeled real target images (adapter 2) and on
/// synthesized target images labeled with source masks (adapter 1). An
/// undefined or zero-length batch contributes 0; both empty is an error.
torch::Tensor seg_objective(SegNet& seg, const torch::Tensor& real_images, const torch::Tensor& real_masks,
                            const torch::Tensor& synth_images, const torch::Tensor& synth_masks,
                            DiceMode mode = DiceMode::BatchGlobal);

/// Adversarial value E[log D(real)] + E[log(1 - D(fake))].
torch::Tensor gan_value(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
/// The discriminator ascends gan_value; this is its negation.
torch::Tensor gan_loss_discriminator(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
/// E[log(1 - D(fake))], or -E[log D(fake)] when non_saturating.
torch::Tensor gan_loss_generator(const torch::Tensor& fake_scores, bool non_saturating = false);

torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b);

/// Everything one translation direction (from -> other(from)) contributes.
/// With deterministic_style the own-style code is the zero vector and the
/// style reconstruction term is left undefined (disabled).
struct DirectionalTerms {
    torch::Tensor content;        // E^c_from(x)
    torch::Tensor own_style;      // E^s_from(x) (or zeros)
    torch::Tensor translated;     // G_to(content, style_to)
    torch::Tensor self_recon;     // |G_from(c, own_style) - x|
    torch::Tensor content_recon;  // |E^c_to(translated) - c|
    torch::Tensor style_recon;    // |E^s_to(translated) - style_to|
    torch::Tensor cycle;          // |G_from(E^c_to(translated), own_style) - x|
};

DirectionalTerms directional_terms(TranslationNet& net, const torch::Tensor& x, Domain from,
                                   const torch::Tensor& style_to, bool deterministic_style = false);

torch::Tensor self_recon_loss(TranslationNet& net, const torch::Tensor& x, Domain domain);
torch::Tensor content_recon_loss(TranslationNet& net, const torch::Tensor& x, Domain from,
                                 const torch::Tensor& style_to);
torch::Tensor style_recon_loss(TranslationNet& net, const torch::Tensor& x, Domain from,
                               const torch::Tensor& style_to);
torch::Tensor cycle_loss(TranslationNet& net, const torch::Tensor& x, Domain from, const torch::Tensor& style_to);

/// Dice of the segmenter (adapter 1) on source images translated with one
/// style per image, against the source masks. Gradients reach the content
/// encoder, generator and segmenter unless detach_generator is set.
torch::Tensor seg_synth_loss(SegNet& seg, TranslationNet& net, const torch::Tensor& source_images,
                             const torch::Tensor& source_masks, const torch::Tensor& styles,
                             bool detach_generator = false, DiceMode mode = DiceMode::BatchGlobal);

/// Per-term tensors. An undefined tensor counts as 0.
struct LossTerms {
    torch::Tensor gan_s, gan_t;
    torch::Tensor recon_s, recon_t;
    torch::Tensor content_s, content_t;
    torch::Tensor style_s, style_t;
    torch::Tensor cycle_s, cycle_t;
    torch::Tensor seg_synth;
};

struct LossReport {
    double gan_s = 0, gan_t = 0, recon_s = 0, recon_t = 0, content_s = 0, content_t = 0;
    double style_s = 0, style_t = 0, cycle_s = 0, cycle_t = 0, seg_synth = 0;
    double total = 0;

    // Term values in a fixed order (total last), as used for log columns.
    std::vector<std::pair<std::string, double>> items() const;
    // Weighted sum of the stored parts; equals `total` up to rounding.
    double reconstruct_total(const LossWeights& w) const;
};

struct Objective {
    torch::Tensor total;
    LossReport report;
};

/// Weighted generator-side objective. Throws PoisonedLoss naming the first
/// non-finite term.
Objective total_objective(const LossTerms& terms, const LossWeights& weights);

}  // namespace uada

#endif  // UADA_LOSSES_HPP
