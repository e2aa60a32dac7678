#include "uada/translation_net.hpp"

#include <string>

#include "uada/errors.hpp"

namespace uada {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(stride == 1 ? k / 2 : 1));
}

// Adds a leading batch dim to rank-`single` tensors; returns whether it did.
std::pair<torch::Tensor, bool> batched(const torch::Tensor& x, int64_t single) {
    if (x.dim() == single) return {x.unsqueeze(0), true};
    if (x.dim() == single + 1) return {x, false};
    throw InvalidArgument("expected a tensor of rank " + std::to_string(single) + " or " +
                          std::to_string(single + 1) + ", got rank " + std::to_string(x.dim()));
}

torch::Tensor unbatched(const torch::Tensor& x, bool squeeze) { return squeeze ? x.squeeze(0) : x; }

torch::Tensor layer_normalize(const torch::Tensor& x, const torch::Tensor& weight, const torch::Tensor& bias) {
    const auto mean = x.mean({1, 2, 3}, true);
    const auto var = (x - mean).pow(2).mean({1, 2, 3}, true);
    return (x - mean) / torch::sqrt(var + kNormEps) * weight.view({1, -1, 1, 1}) + bias.view({1, -1, 1, 1});
}

}  // namespace

torch::Tensor activate(const torch::Tensor& x, Activation a) {
    switch (a) {
        case Activation::Relu: return torch::relu(x);
        case Activation::LeakyRelu: return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
        case Activation::Softplus: return F::softplus(x);
    }
    return x;
}

torch::Tensor instance_normalize(const torch::Tensor& x, double eps) {
    const auto mean = x.mean({-2, -1}, true);
    const auto var = (x - mean).pow(2).mean({-2, -1}, true);
    return (x - mean) / torch::sqrt(var + eps);
}

torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& gamma, const torch::Tensor& beta,
                    double eps) {
    if (features.dim() != 3 && features.dim() != 4) throw InvalidArgument("adain: features must be [C,H,W] or [B,C,H,W]");
    const int64_t c = features.size(-3);
    if (gamma.size(-1) != c || beta.size(-1) != c || gamma.dim() != features.dim() - 2 || beta.dim() != gamma.dim())
        throw InvalidArgument("adain: gamma/beta must have one entry per feature channel");
    const auto g = gamma.unsqueeze(-1).unsqueeze(-1);
    const auto b = beta.unsqueeze(-1).unsqueeze(-1);
    return g * instance_normalize(features, eps) + b;
}

torch::Tensor sample_style(at::Generator& rng, int style_dim, int64_t count) {
    if (count == 0) return torch::randn({style_dim}, rng, torch::kFloat32);
    return torch::randn({count, style_dim}, rng, torch::kFloat32);
}

ResBlockImpl::ResBlockImpl(int channels, Activation act) : act(act) {
    conv1 = register_module("conv1", conv(channels, channels, 3));
    conv2 = register_module("conv2", conv(channels, channels, 3));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto y = activate(instance_normalize(conv1(x)), act);
    return x + instance_normalize(conv2(y));
}

ContentEncoderImpl::ContentEncoderImpl(int in, const TranslationConfig& cfg) : act(cfg.activation) {
    stem = register_module("stem", conv(in, cfg.dim, cfg.stem_kernel));
    down1 = register_module("down1", conv(cfg.dim, 2 * cfg.dim, 4, 2));
    down2 = register_module("down2", conv(2 * cfg.dim, 4 * cfg.dim, 4, 2));
    for (int i = 0; i < cfg.n_res; ++i) blocks->push_back(ResBlock(4 * cfg.dim, cfg.activation));
    register_module("blocks", blocks);
}

torch::Tensor ContentEncoderImpl::forward(const torch::Tensor& x) {
    auto h = activate(instance_normalize(stem(x)), act);
    h = activate(instance_normalize(down1(h)), act);
    h = activate(instance_normalize(down2(h)), act);
    for (const auto& b : *blocks) h = b->as<ResBlock>()->forward(h);
    return h;
}

StyleEncoderImpl::StyleEncoderImpl(int in, const TranslationConfig& cfg) : act(cfg.activation) {
    stem = register_module("stem", conv(in, cfg.dim, cfg.stem_kernel));
    down1 = register_module("down1", conv(cfg.dim, 2 * cfg.dim, 4, 2));
    down2 = register_module("down2", conv(2 * cfg.dim, 4 * cfg.dim, 4, 2));
    head = register_module("head", torch::nn::Linear(4 * cfg.dim, cfg.style_dim));
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& x) {
    auto h = activate(stem(x), act);
    h = activate(down1(h), act);
    h = activate(down2(h), act);
    return head(h.mean({2, 3}));
}

StyleMlpImpl::StyleMlpImpl(int style_dim, int hidden, int out, Activation act) : act(act) {
    fc1 = register_module("fc1", torch::nn::Linear(style_dim, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, hidden));
    fc3 = register_module("fc3", torch::nn::Linear(hidden, out));
}

torch::Tensor StyleMlpImpl::forward(const torch::Tensor& s) {
    return fc3(activate(fc2(activate(fc1(s), act)), act));
}

GeneratorImpl::GeneratorImpl(int out_channels, const TranslationConfig& cfg)
    : n_res(cfg.n_res), width(cfg.content_channels()), act(cfg.activation) {
    for (int i = 0; i < 2 * n_res; ++i) res_convs->push_back(conv(width, width, 3));
    register_module("res_convs", res_convs);
    up1 = register_module("up1", conv(width, width / 2, 5));
    up2 = register_module("up2", conv(width / 2, width / 4, 5));
    out = register_module("out", conv(width / 4, out_channels, cfg.stem_kernel));
    ln1_weight = register_parameter("ln1_weight", torch::ones({width / 2}));
    ln1_bias = register_parameter("ln1_bias", torch::zeros({width / 2}));
    ln2_weight = register_parameter("ln2_weight", torch::ones({width / 4}));
    ln2_bias = register_parameter("ln2_bias", torch::zeros({width / 4}));
    mlp = register_module("mlp", StyleMlp(cfg.style_dim, cfg.mlp_dim, adain_params(), cfg.activation));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& content, const torch::Tensor& style) {
    // MLP output is split into (gamma - 1, beta) chunks, two AdaIN layers per block.
    const auto params = mlp(style);
    auto chunk = [&](int i) { return params.narrow(1, int64_t(i) * width, width); };
    auto h = content;
    for (int b = 0; b < n_res; ++b) {
        const int base = 4 * b;
        auto y = res_convs[2 * b]->as<torch::nn::Conv2d>()->forward(h);
        y = activate(adain(y, 1.0 + chunk(base), chunk(base + 1)), act);
        y = res_convs[2 * b + 1]->as<torch::nn::Conv2d>()->forward(y);
        y = adain(y, 1.0 + chunk(base + 2), chunk(base + 3));
        h = h + y;
    }
    const auto up = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);
    h = activate(layer_normalize(up1(F::interpolate(h, up)), ln1_weight, ln1_bias), act);
    h = activate(layer_normalize(up2(F::interpolate(h, up)), ln2_weight, ln2_bias), act);
    return out(h);
}

DiscriminatorImpl::DiscriminatorImpl(int in, int dim, Activation a) : act(a) {
    c1 = register_module("c1", conv(in, dim, 4, 2));
    c2 = register_module("c2", conv(dim, 2 * dim, 4, 2));
    c3 = register_module("c3", conv(2 * dim, 4 * dim, 4, 2));
    c4 = register_module("c4", conv(4 * dim, 1, 4, 2));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) {
    auto h = activate(c1(x), act);
    h = activate(c2(h), act);
    h = activate(c3(h), act);
    return c4(h);
}

TranslationNetImpl::TranslationNetImpl(TranslationConfig cfg) : cfg_(cfg) {
    if (cfg_.dim < 1 || cfg_.n_res < 0 || cfg_.style_dim < 1 || cfg_.mlp_dim < 1 || cfg_.disc_dim < 1 ||
        cfg_.stem_kernel < 1 || cfg_.stem_kernel % 2 == 0 || cfg_.source_channels < 1 || cfg_.target_channels < 1)
        throw InvalidArgument("invalid translation network configuration");
    content_s_ = register_module("content_s", ContentEncoder(cfg_.source_channels, cfg_));
    content_t_ = register_module("content_t", ContentEncoder(cfg_.target_channels, cfg_));
    style_s_ = register_module("style_s", StyleEncoder(cfg_.source_channels, cfg_));
    style_t_ = register_module("style_t", StyleEncoder(cfg_.target_channels, cfg_));
    gen_s_ = register_module("gen_s", Generator(cfg_.source_channels, cfg_));
    gen_t_ = register_module("gen_t", Generator(cfg_.target_channels, cfg_));
    const auto dis_act = cfg_.activation == Activation::Softplus ? Activation::Softplus : Activation::LeakyRelu;
    dis_s_ = register_module("dis_s", Discriminator(cfg_.source_channels, cfg_.disc_dim, dis_act));
    dis_t_ = register_module("dis_t", Discriminator(cfg_.target_channels, cfg_.disc_dim, dis_act));
}

void TranslationNetImpl::check_image(const torch::Tensor& image, Domain domain, const char* op) const {
    if (image.dim() != 3 && image.dim() != 4)
        throw InvalidArgument(std::string(op) + ": image must be [C,H,W] or [B,C,H,W]");
    if (image.size(-3) != cfg_.channels(domain))
        throw InvalidArgument(std::string(op) + ": " + to_string(domain) + " images have " +
                              std::to_string(cfg_.channels(domain)) + " channels, got " +
                              std::to_string(image.size(-3)));
    if (image.size(-1) % 4 != 0 || image.size(-2) % 4 != 0)
        throw InvalidArgument(std::string(op) + ": spatial dims must be divisible by 4");
}

torch::Tensor TranslationNetImpl::encode_content(const torch::Tensor& image, Domain domain) {
    check_image(image, domain, "encode_content");
    auto [x, squeeze] = batched(image, 3);
    return unbatched(content_encoder(domain)->forward(x), squeeze);
}

torch::Tensor TranslationNetImpl::encode_style(const torch::Tensor& image, Domain domain) {
    check_image(image, domain, "encode_style");
    auto [x, squeeze] = batched(image, 3);
    return unbatched(style_encoder(domain)->forward(x), squeeze);
}

torch::Tensor TranslationNetImpl::decode(const torch::Tensor& content, const torch::Tensor& style, Domain domain) {
    auto [c, squeeze] = batched(content, 3);
    auto [s, style_squeezed] = batched(style, 1);
    if (c.size(1) != cfg_.content_channels())
        throw InvalidArgument("decode: content code must have " + std::to_string(cfg_.content_channels()) +
                              " channels, got " + std::to_string(c.size(1)));
    if (s.size(1) != cfg_.style_dim)
        throw InvalidArgument("decode: style code must have length " + std::to_string(cfg_.style_dim));
    if (s.size(0) != c.size(0)) throw InvalidArgument("decode: content and style batch sizes differ");
    return unbatched(generator(domain)->forward(c, s), squeeze);
}

torch::Tensor TranslationNetImpl::translate(const torch::Tensor& image, Domain from, Domain to,
                                            const torch::Tensor& style) {
    if (from == to) throw InvalidArgument("translate: source and destination domains must differ");
    return decode(encode_content(image, from), style, to);
}

torch::Tensor TranslationNetImpl::discriminate(const torch::Tensor& image, Domain domain) {
    check_image(image, domain, "discriminate");
    auto [x, squeeze] = batched(image, 3);
    auto scores = torch::sigmoid(discriminator(domain)->forward(x)).clamp(kScoreClamp, 1.0 - kScoreClamp);
    return unbatched(scores, squeeze);
}

std::vector<torch::Tensor> TranslationNetImpl::generator_parameters() const {
    std::vector<torch::Tensor> out;
    for (const torch::nn::Module* m : std::initializer_list<const torch::nn::Module*>{
             content_s_.get(), content_t_.get(), style_s_.get(), style_t_.get(), gen_s_.get(), gen_t_.get()}) {
        auto p = m->parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<torch::Tensor> TranslationNetImpl::discriminator_parameters() const {
    auto out = dis_s_->parameters();
    auto t = dis_t_->parameters();
    out.insert(out.end(), t.begin(), t.end());
    return out;
}

}  // namespace uada
