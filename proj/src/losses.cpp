#include "uada/losses.hpp"

#include <cmath>

#include "uada/errors.hpp"

namespace uada {

namespace {

bool empty_batch(const torch::Tensor& t) { return !t.defined() || t.numel() == 0; }

double scalar_or_zero(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

torch::Tensor zero_like_scalar() { return torch::zeros({}); }

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target, DiceMode mode) {
    if (pred.sizes() != target.sizes())
        throw InvalidArgument("dice_loss: prediction and target shapes differ");
    const auto y = target.to(pred.scalar_type());
    if (mode == DiceMode::PerImage && pred.dim() >= 2) {
        const auto p = pred.flatten(1), t = y.flatten(1);
        const auto num = 2.0 * (p * t).sum(1);
        const auto den = (p * p).sum(1) + (t * t).sum(1) + kDiceSmooth;
        return -(num / den).mean();
    }
    const auto num = 2.0 * (pred * y).sum();
    const auto den = (pred * pred).sum() + (y * y).sum() + kDiceSmooth;
    return -num / den;
}

torch::Tensor seg_objective(SegNet& seg, const torch::Tensor& real_images, const torch::Tensor& real_masks,
                            const torch::Tensor& synth_images, const torch::Tensor& synth_masks, DiceMode mode) {
    const bool no_real = empty_batch(real_images), no_synth = empty_batch(synth_images);
    if (no_real && no_synth) throw InvalidArgument("seg_objective: both batches are empty");
    torch::Tensor total;
    if (!no_real) total = dice_loss(seg->segment(real_images, AdapterDomain::Real), real_masks, mode);
    if (!no_synth) {
        auto synth = dice_loss(seg->segment(synth_images, AdapterDomain::Synthesized), synth_masks, mode);
        total = total.defined() ? total + synth : synth;
    }
    return total;
}

torch::Tensor gan_value(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
    return torch::log(real_scores).mean() + torch::log(1.0 - fake_scores).mean();
}

torch::Tensor gan_loss_discriminator(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
    return -gan_value(real_scores, fake_scores);
}

torch::Tensor gan_loss_generator(const torch::Tensor& fake_scores, bool non_saturating) {
    if (non_saturating) return -torch::log(fake_scores).mean();
    return torch::log(1.0 - fake_scores).mean();
}

torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw InvalidArgument("l1_loss: shapes differ");
    return (a - b).abs().mean();
}

DirectionalTerms directional_terms(TranslationNet& net, const torch::Tensor& x, Domain from,
                                   const torch::Tensor& style_to, bool deterministic_style) {
    const Domain to = other(from);
    DirectionalTerms t;
    t.content = net->encode_content(x, from);
    t.own_style = deterministic_style ? torch::zeros_like(style_to) : net->encode_style(x, from);
    t.self_recon = uada::l1_loss(net->decode(t.content, t.own_style, from), x);
    t.translated = net->decode(t.content, style_to, to);
    const auto content_back = net->encode_content(t.translated, to);
    t.content_recon = uada::l1_loss(content_back, t.content);
    if (!deterministic_style) t.style_recon = uada::l1_loss(net->encode_style(t.translated, to), style_to);
    t.cycle = uada::l1_loss(net->decode(content_back, t.own_style, from), x);
    return t;
}

torch::Tensor self_recon_loss(TranslationNet& net, const torch::Tensor& x, Domain domain) {
    return uada::l1_loss(net->decode(net->encode_content(x, domain), net->encode_style(x, domain), domain), x);
}

torch::Tensor content_recon_loss(TranslationNet& net, const torch::Tensor& x, Domain from,
                                 const torch::Tensor& style_to) {
    const auto c = net->encode_content(x, from);
    return uada::l1_loss(net->encode_content(net->decode(c, style_to, other(from)), other(from)), c);
}

torch::Tensor style_recon_loss(TranslationNet& net, const torch::Tensor& x, Domain from,
                               const torch::Tensor& style_to) {
    const auto c = net->encode_content(x, from);
    return uada::l1_loss(net->encode_style(net->decode(c, style_to, other(from)), other(from)), style_to);
}

torch::Tensor cycle_loss(TranslationNet& net, const torch::Tensor& x, Domain from, const torch::Tensor& style_to) {
    const Domain to = other(from);
    const auto translated = net->translate(x, from, to, style_to);
    return uada::l1_loss(net->decode(net->encode_content(translated, to), net->encode_style(x, from), from), x);
}

torch::Tensor seg_synth_loss(SegNet& seg, TranslationNet& net, const torch::Tensor& source_images,
                             const torch::Tensor& source_masks, const torch::Tensor& styles, bool detach_generator,
                             DiceMode mode) {
    if (empty_batch(source_images)) throw InvalidArgument("seg_synth_loss: empty batch");
    auto synth = net->translate(source_images, Domain::Source, Domain::Target, styles);
    if (detach_generator) synth = synth.detach();
    return dice_loss(seg->segment(synth, AdapterDomain::Synthesized), source_masks, mode);
}

std::vector<std::pair<std::string, double>> LossReport::items() const {
    return {{"gan_s", gan_s},         {"gan_t", gan_t},         {"recon_s", recon_s}, {"recon_t", recon_t},
            {"content_s", content_s}, {"content_t", content_t}, {"style_s", style_s}, {"style_t", style_t},
            {"cycle_s", cycle_s},     {"cycle_t", cycle_t},     {"seg_synth", seg_synth}, {"total", total}};
}

double LossReport::reconstruct_total(const LossWeights& w) const {
    return w.gan * (gan_s + gan_t) + w.recon * (recon_s + recon_t) + w.content * (content_s + content_t) +
           w.style * (style_s + style_t) + w.cycle * (cycle_s + cycle_t) + w.seg_synth * seg_synth;
}

Objective total_objective(const LossTerms& t, const LossWeights& w) {
    struct Entry {
        const char* name;
        const torch::Tensor* value;
        double weight;
        double LossReport::*slot;
    };
    const Entry entries[] = {
        {"gan_s", &t.gan_s, w.gan, &LossReport::gan_s},
        {"gan_t", &t.gan_t, w.gan, &LossReport::gan_t},
        {"recon_s", &t.recon_s, w.recon, &LossReport::recon_s},
        {"recon_t", &t.recon_t, w.recon, &LossReport::recon_t},
        {"content_s", &t.content_s, w.content, &LossReport::content_s},
        {"content_t", &t.content_t, w.content, &LossReport::content_t},
        {"style_s", &t.style_s, w.style, &LossReport::style_s},
        {"style_t", &t.style_t, w.style, &LossReport::style_t},
        {"cycle_s", &t.cycle_s, w.cycle, &LossReport::cycle_s},
        {"cycle_t", &t.cycle_t, w.cycle, &LossReport::cycle_t},
        {"seg_synth", &t.seg_synth, w.seg_synth, &LossReport::seg_synth},
    };
    for (double lambda : {w.gan, w.recon, w.content, w.style, w.cycle, w.seg_synth})
        if (!std::isfinite(lambda) || lambda < 0.0) throw InvalidArgument("loss weights must be finite and >= 0");

    Objective out;
    for (const auto& e : entries) {
        const double v = scalar_or_zero(*e.value);
        if (!std::isfinite(v)) throw PoisonedLoss(e.name);
        out.report.*e.slot = v;
        if (!e.value->defined()) continue;
        auto term = *e.value * e.weight;
        out.total = out.total.defined() ? out.total + term : term;
    }
    if (!out.total.defined()) out.total = zero_like_scalar();
    out.report.total = out.total.item<double>();
    return out;
}

}  // namespace uada
