#ifndef UADA_CHECKPOINT_HPP
#define UADA_CHECKPOINT_HPP

// "uada-ckpt/1" container: 8-byte magic "UADACKPT", u32 header length, a JSON
// header (format tag, config echo, tensor table), then little-endian f32 data.

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "uada/segmentation_net.hpp"
#include "uada/translation_net.hpp"

namespace uada {

inline constexpr const char* kCheckpointFormat = "uada-ckpt/1";

struct NamedTensor {
    std::string name;
    torch::Tensor value;  // float32, contiguous
};

struct Checkpoint {
    nlohmann::json config = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const torch::Tensor* find(const std::string& name) const;
};

// Tensors are namespaced "translation/..." and "segmentation/...". Either
// network may be null.
Checkpoint capture(const TranslationNet* translation, const SegNet* segmentation, nlohmann::json config);
void restore(const Checkpoint& ckpt, TranslationNet* translation, SegNet* segmentation);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uada

#endif  // UADA_CHECKPOINT_HPP
