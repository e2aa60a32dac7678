#ifndef UADA_TRANSLATION_NET_HPP
#define UADA_TRANSLATION_NET_HPP

// Content/style disentangling translation network: per-domain content
// encoders into a shared content space, per-domain style encoders, AdaIN
// generators driven by a style MLP, and patch discriminators.
//
// All image-valued functions accept either a single image [C,H,W] or a batch
// [B,C,H,W] and return the matching rank.

#include <cstdint>

#include <torch/torch.h>

#include "uada/phantom_data.hpp"

namespace uada {

enum class Activation { Relu, LeakyRelu, Softplus };

torch::Tensor activate(const torch::Tensor& x, Activation a);

struct TranslationConfig {
    int source_channels = 3;
    int target_channels = 5;
    int dim = 16;            // content code has 4 * dim channels
    int n_res = 3;
    int style_dim = 8;
    int mlp_dim = 64;
    int disc_dim = 16;
    int stem_kernel = 7;
    Activation activation = Activation::Relu;

    int channels(Domain d) const { return d == Domain::Source ? source_channels : target_channels; }
    int content_channels() const { return 4 * dim; }
};

inline constexpr double kNormEps = 1e-5;
inline constexpr double kScoreClamp = 1e-7;

// Per-sample, per-channel normalization over the spatial dims (biased variance).
torch::Tensor instance_normalize(const torch::Tensor& x, double eps = kNormEps);

/// Adaptive instance normalization:
///   out[c] = gamma[c] * (x[c] - mean_c) / sqrt(var_c + eps) + beta[c]
/// features [C,H,W] with gamma/beta [C], or [B,C,H,W] with gamma/beta [B,C].
torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& gamma, const torch::Tensor& beta,
                    double eps = kNormEps);

/// Standard-normal style codes, [style_dim] (count == 0) or [count, style_dim].
torch::Tensor sample_style(at::Generator& rng, int style_dim, int64_t count = 0);

struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int channels, Activation act);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    Activation act;
};
TORCH_MODULE(ResBlock);

struct ContentEncoderImpl : torch::nn::Module {
    ContentEncoderImpl(int in_channels, const TranslationConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d stem{nullptr}, down1{nullptr}, down2{nullptr};
    torch::nn::ModuleList blocks;
    Activation act;
};
TORCH_MODULE(ContentEncoder);

struct StyleEncoderImpl : torch::nn::Module {
    StyleEncoderImpl(int in_channels, const TranslationConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d stem{nullptr}, down1{nullptr}, down2{nullptr};
    torch::nn::Linear head{nullptr};
    Activation act;
};
TORCH_MODULE(StyleEncoder);

// Maps a style code to every (gamma, beta) pair of a generator.
struct StyleMlpImpl : torch::nn::Module {
    StyleMlpImpl(int style_dim, int hidden, int out, Activation act);
    torch::Tensor forward(const torch::Tensor& s);

    torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
    Activation act;
};
TORCH_MODULE(StyleMlp);

struct GeneratorImpl : torch::nn::Module {
    GeneratorImpl(int out_channels, const TranslationConfig& cfg);
    torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& style);

    int adain_params() const { return n_res * 4 * width; }

    torch::nn::ModuleList res_convs;  // 2 per residual block
    torch::nn::Conv2d up1{nullptr}, up2{nullptr}, out{nullptr};
    torch::Tensor ln1_weight, ln1_bias, ln2_weight, ln2_bias;
    StyleMlp mlp{nullptr};
    int n_res;
    int width;  // content channels
    Activation act;
};
TORCH_MODULE(Generator);

struct DiscriminatorImpl : torch::nn::Module {
    // Leaky ReLU unless the smooth (Softplus) variant is requested.
    DiscriminatorImpl(int in_channels, int dim, Activation act = Activation::LeakyRelu);
    torch::Tensor forward(const torch::Tensor& x);  // raw logits [B,1,H/16,W/16]

    torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr};
    Activation act;
};
TORCH_MODULE(Discriminator);

class TranslationNetImpl : public torch::nn::Module {
public:
    explicit TranslationNetImpl(TranslationConfig cfg = {});

    const TranslationConfig& config() const noexcept { return cfg_; }

    torch::Tensor encode_content(const torch::Tensor& image, Domain domain);
    torch::Tensor encode_style(const torch::Tensor& image, Domain domain);
    torch::Tensor decode(const torch::Tensor& content, const torch::Tensor& style, Domain domain);
    torch::Tensor translate(const torch::Tensor& image, Domain from, Domain to, const torch::Tensor& style);
    // Logistic scores clamped to [1e-7, 1 - 1e-7], [1,H/16,W/16] or [B,1,H/16,W/16].
    torch::Tensor discriminate(const torch::Tensor& image, Domain domain);

    std::vector<torch::Tensor> generator_parameters() const;  // encoders + generators
    std::vector<torch::Tensor> discriminator_parameters() const;

    ContentEncoder content_encoder(Domain d) const { return d == Domain::Source ? content_s_ : content_t_; }
    StyleEncoder style_encoder(Domain d) const { return d == Domain::Source ? style_s_ : style_t_; }
    Generator generator(Domain d) const { return d == Domain::Source ? gen_s_ : gen_t_; }
    Discriminator discriminator(Domain d) const { return d == Domain::Source ? dis_s_ : dis_t_; }

private:
    void check_image(const torch::Tensor& image, Domain domain, const char* op) const;

    TranslationConfig cfg_;
    ContentEncoder content_s_{nullptr}, content_t_{nullptr};
    StyleEncoder style_s_{nullptr}, style_t_{nullptr};
    Generator gen_s_{nullptr}, gen_t_{nullptr};
    Discriminator dis_s_{nullptr}, dis_t_{nullptr};
};
TORCH_MODULE(TranslationNet);

}  // namespace uada

#endif  // UADA_TRANSLATION_NET_HPP
