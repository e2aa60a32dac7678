#ifndef UADA_METRICS_HPP
#define UADA_METRICS_HPP

// Voxel-level segmentation metrics.
//
// Zero-denominator convention: recall is 1 when the mask is empty and nothing
// was predicted, else 0; precision is 1 when nothing was predicted and the
// mask is empty, else 0; DSC is 1 when both are empty.

#include <cstdint>

#include <torch/torch.h>

namespace uada {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::int64_t total() const noexcept { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
        return *this;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

inline constexpr double kDefaultThreshold = 0.5;

/// Voxel is predicted positive when pred >= threshold.
ConfusionCounts confusion(const torch::Tensor& pred_prob, const torch::Tensor& mask,
                          double threshold = kDefaultThreshold);

double recall(const ConfusionCounts& cc);
double precision(const ConfusionCounts& cc);
double dsc_metric(const ConfusionCounts& cc);

/// Step-wise AP over all score thresholds: voxels sorted by descending score,
/// precision summed at each positive and divided by the positive count. Tied
/// scores form one threshold. Returns NaN when the mask has no positives.
double average_precision(const torch::Tensor& scores, const torch::Tensor& mask);

}  // namespace uada

#endif  // UADA_METRICS_HPP
