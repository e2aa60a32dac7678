#include "uada/segmentation_net.hpp"

#include <cmath>
#include <string>

#include "uada/errors.hpp"

namespace uada {

namespace F = torch::nn::functional;

AdapterDomain adapter_domain_from_int(int i) {
    if (i == 1) return AdapterDomain::Synthesized;
    if (i == 2) return AdapterDomain::Real;
    throw InvalidArgument("adapter domain must be 1 (synthesized) or 2 (real), got " + std::to_string(i));
}

torch::Tensor adapted_conv(const torch::Tensor& x, const torch::Tensor& filter, const torch::Tensor& adapter,
                           int stride, const torch::Tensor& bias) {
    if (filter.dim() != 4 || adapter.dim() != 4 || filter.size(2) != filter.size(3) || filter.size(2) % 2 == 0)
        throw InvalidArgument("adapted_conv: filter must be [C_o,C_i,k,k] with odd k and adapter [C_o,C_i,1,1]");
    if (adapter.size(0) != filter.size(0) || adapter.size(1) != filter.size(1) || adapter.size(2) != 1 ||
        adapter.size(3) != 1)
        throw InvalidArgument("adapted_conv: adapter shape must be [C_o,C_i,1,1] matching the filter");
    if ((x.dim() != 3 && x.dim() != 4) || x.size(-3) != filter.size(1))
        throw InvalidArgument("adapted_conv: input channels do not match the filter");
    const bool single = x.dim() == 3;
    const auto in = single ? x.unsqueeze(0) : x;
    const auto k = filter.size(2);
    const std::array<int64_t, 2> step{stride, stride}, pad{k / 2, k / 2}, none{0, 0};
    auto y = torch::conv2d(in, filter, bias, step, pad) + torch::conv2d(in, adapter, {}, step, none);
    return single ? y.squeeze(0) : y;
}

AdaptedConvImpl::AdaptedConvImpl(int in, int out, int kernel, int stride) : stride(stride) {
    // Same init scheme as torch::nn::Conv2d (kaiming-uniform, a = sqrt(5)).
    const double bound = 1.0 / std::sqrt(double(in) * kernel * kernel);
    weight = register_parameter("weight", torch::empty({out, in, kernel, kernel}).uniform_(-bound, bound));
    bias = register_parameter("bias", torch::empty({out}).uniform_(-bound, bound));
    adapter1 = register_parameter("adapter1", torch::zeros({out, in, 1, 1}));
    adapter2 = register_parameter("adapter2", torch::zeros({out, in, 1, 1}));
}

torch::Tensor AdaptedConvImpl::forward(const torch::Tensor& x, AdapterDomain domain) {
    return adapted_conv(x, weight, adapter(domain), stride, bias);
}

SegNetImpl::SegNetImpl(SegConfig cfg) : cfg_(cfg) {
    if (cfg_.width < 1 || cfg_.source_channels < 1 || cfg_.target_channels < 1)
        throw InvalidArgument("invalid segmentation network configuration");
    const int w = cfg_.width;
    stem_s_ = register_module("stem_s", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.source_channels, w, 1)));
    stem_t_ = register_module("stem_t", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.target_channels, w, 1)));
    enc1_ = register_module("enc1", AdaptedConv(w, w, 3));
    res1a_ = register_module("res1a", AdaptedConv(w, w, 3));
    res1b_ = register_module("res1b", AdaptedConv(w, w, 3));
    down2_ = register_module("down2", AdaptedConv(w, 2 * w, 3, 2));
    res2a_ = register_module("res2a", AdaptedConv(2 * w, 2 * w, 3));
    res2b_ = register_module("res2b", AdaptedConv(2 * w, 2 * w, 3));
    down3_ = register_module("down3", AdaptedConv(2 * w, 4 * w, 3, 2));
    res3a_ = register_module("res3a", AdaptedConv(4 * w, 4 * w, 3));
    res3b_ = register_module("res3b", AdaptedConv(4 * w, 4 * w, 3));
    dec2_ = register_module("dec2", AdaptedConv(6 * w, 2 * w, 3));
    dec1_ = register_module("dec1", AdaptedConv(3 * w, w, 3));
    head_ = register_module("head", AdaptedConv(w, 1, 1));
}

torch::Tensor SegNetImpl::logits(const torch::Tensor& image, AdapterDomain domain, Domain modality) {
    if (domain != AdapterDomain::Synthesized && domain != AdapterDomain::Real)
        throw InvalidArgument("segment: unknown adapter domain");
    if ((image.dim() != 3 && image.dim() != 4) || image.size(-3) != cfg_.channels(modality))
        throw InvalidArgument("segment: " + to_string(modality) + " stem expects " +
                              std::to_string(cfg_.channels(modality)) + " channels");
    if (image.size(-1) % 4 != 0 || image.size(-2) % 4 != 0)
        throw InvalidArgument("segment: spatial dims must be divisible by 4");
    const bool single = image.dim() == 3;
    const auto x = single ? image.unsqueeze(0) : image;
    const auto act = cfg_.activation;
    auto block = [&](const torch::Tensor& h, AdaptedConv& a, AdaptedConv& b) {
        auto r = activate(instance_normalize(a->forward(h, domain)), act);
        return activate(h + instance_normalize(b->forward(r, domain)), act);
    };
    auto stage = [&](const torch::Tensor& h, AdaptedConv& c) {
        return activate(instance_normalize(c->forward(h, domain)), act);
    };
    const auto up = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);

    auto h = modality == Domain::Source ? stem_s_(x) : stem_t_(x);
    auto e1 = block(stage(h, enc1_), res1a_, res1b_);
    auto e2 = block(stage(e1, down2_), res2a_, res2b_);
    auto e3 = block(stage(e2, down3_), res3a_, res3b_);
    auto d2 = stage(torch::cat({F::interpolate(e3, up), e2}, 1), dec2_);
    auto d1 = stage(torch::cat({F::interpolate(d2, up), e1}, 1), dec1_);
    auto out = head_->forward(d1, domain).squeeze(1);
    return single ? out.squeeze(0) : out;
}

torch::Tensor SegNetImpl::segment(const torch::Tensor& image, AdapterDomain domain, Domain modality) {
    return torch::sigmoid(logits(image, domain, modality));
}

torch::Tensor SegNetImpl::segment(const torch::Tensor& image) { return segment(image, active_); }

std::vector<AdaptedConv> SegNetImpl::adapted_layers() const {
    return {enc1_, res1a_, res1b_, down2_, res2a_, res2b_, down3_, res3a_, res3b_, dec2_, dec1_, head_};
}

std::vector<torch::Tensor> SegNetImpl::backbone_parameters() const {
    std::vector<torch::Tensor> out;
    for (const auto& l : adapted_layers()) {
        out.push_back(l->weight);
        out.push_back(l->bias);
    }
    return out;
}

std::vector<torch::Tensor> SegNetImpl::adapter_parameters(AdapterDomain d) const {
    std::vector<torch::Tensor> out;
    for (const auto& l : adapted_layers()) out.push_back(d == AdapterDomain::Synthesized ? l->adapter1 : l->adapter2);
    return out;
}

std::vector<torch::Tensor> SegNetImpl::stem_parameters(Domain modality) const {
    return modality == Domain::Source ? stem_s_->parameters() : stem_t_->parameters();
}

}  // namespace uada
