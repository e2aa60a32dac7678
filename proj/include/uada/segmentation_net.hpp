#ifndef UADA_SEGMENTATION_NET_HPP
#define UADA_SEGMENTATION_NET_HPP

// Encoder-decoder lesion segmenter shared by both target-image sources, with a
// pair of 1x1 residual adapters installed in parallel to every convolution:
//   y = F * x + Z_i * x
// Adapter index 1 serves synthesized target images, index 2 real ones.

#include <array>
#include <vector>

#include <torch/torch.h>

#include "uada/phantom_data.hpp"
#include "uada/translation_net.hpp"

namespace uada {

enum class AdapterDomain : int { Synthesized = 1, Real = 2 };

AdapterDomain adapter_domain_from_int(int i);  // throws InvalidArgument outside {1, 2}

/// y = F * x + Z * x with "same" padding for F (odd kernel) and a 1x1 Z.
/// x is [C_i,H,W] or [B,C_i,H,W]; F is [C_o,C_i,k,k]; Z is [C_o,C_i,1,1].
torch::Tensor adapted_conv(const torch::Tensor& x, const torch::Tensor& filter, const torch::Tensor& adapter,
                           int stride = 1, const torch::Tensor& bias = {});

struct AdaptedConvImpl : torch::nn::Module {
    AdaptedConvImpl(int in_channels, int out_channels, int kernel, int stride = 1);
    torch::Tensor forward(const torch::Tensor& x, AdapterDomain domain);

    torch::Tensor& adapter(AdapterDomain d) { return d == AdapterDomain::Synthesized ? adapter1 : adapter2; }

    torch::Tensor weight, bias;        // backbone
    torch::Tensor adapter1, adapter2;  // zero-initialized 1x1 filters
    int stride;
};
TORCH_MODULE(AdaptedConv);

struct SegConfig {
    int source_channels = 3;
    int target_channels = 5;
    int width = 16;
    Activation activation = Activation::Relu;

    int channels(Domain d) const { return d == Domain::Source ? source_channels : target_channels; }
};

class SegNetImpl : public torch::nn::Module {
public:
    explicit SegNetImpl(SegConfig cfg = {});

    const SegConfig& config() const noexcept { return cfg_; }

    /// Probability map in [0,1]: [H,W] for one image, [B,H,W] for a batch.
    /// `modality` selects the input stem (target images by default).
    torch::Tensor segment(const torch::Tensor& image, AdapterDomain domain, Domain modality = Domain::Target);
    torch::Tensor segment(const torch::Tensor& image);  // uses the active domain
    torch::Tensor logits(const torch::Tensor& image, AdapterDomain domain, Domain modality = Domain::Target);

    /// Default is AdapterDomain::Synthesized (index 1).
    void set_active_domain(AdapterDomain d) { active_ = d; }
    void set_active_domain(int i) { active_ = adapter_domain_from_int(i); }
    AdapterDomain active_domain() const noexcept { return active_; }

    std::vector<torch::Tensor> backbone_parameters() const;
    std::vector<torch::Tensor> adapter_parameters(AdapterDomain d) const;
    std::vector<torch::Tensor> stem_parameters(Domain modality) const;
    std::vector<AdaptedConv> adapted_layers() const;

private:
    SegConfig cfg_;
    AdapterDomain active_ = AdapterDomain::Synthesized;
    torch::nn::Conv2d stem_s_{nullptr}, stem_t_{nullptr};
    AdaptedConv enc1_{nullptr}, res1a_{nullptr}, res1b_{nullptr};
    AdaptedConv down2_{nullptr}, res2a_{nullptr}, res2b_{nullptr};
    AdaptedConv down3_{nullptr}, res3a_{nullptr}, res3b_{nullptr};
    AdaptedConv dec2_{nullptr}, dec1_{nullptr}, head_{nullptr};
};
TORCH_MODULE(SegNet);

}  // namespace uada

#endif  // UADA_SEGMENTATION_NET_HPP
