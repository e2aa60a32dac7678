#include "uada/metrics.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "uada/errors.hpp"

namespace uada {

namespace {

std::vector<double> as_doubles(const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kFloat64).contiguous().flatten();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

ConfusionCounts confusion(const torch::Tensor& pred_prob, const torch::Tensor& mask, double threshold) {
    if (pred_prob.sizes() != mask.sizes()) throw InvalidArgument("confusion: prediction and mask shapes differ");
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("confusion: threshold must be in (0, 1)");
    const auto pred = pred_prob.detach().to(torch::kFloat64) >= threshold;
    const auto truth = mask.detach().to(torch::kFloat64) > 0.5;
    ConfusionCounts cc;
    cc.tp = (pred & truth).sum().item<std::int64_t>();
    cc.fp = (pred & ~truth).sum().item<std::int64_t>();
    cc.fn = (~pred & truth).sum().item<std::int64_t>();
    cc.tn = (~pred & ~truth).sum().item<std::int64_t>();
    return cc;
}

double recall(const ConfusionCounts& cc) {
    if (cc.tp + cc.fn == 0) return cc.fp == 0 ? 1.0 : 0.0;
    return double(cc.tp) / double(cc.tp + cc.fn);
}

double precision(const ConfusionCounts& cc) {
    if (cc.tp + cc.fp == 0) return cc.fn == 0 ? 1.0 : 0.0;
    return double(cc.tp) / double(cc.tp + cc.fp);
}

double dsc_metric(const ConfusionCounts& cc) {
    const auto den = 2 * cc.tp + cc.fp + cc.fn;
    if (den == 0) return 1.0;
    return 2.0 * double(cc.tp) / double(den);
}

double average_precision(const torch::Tensor& scores, const torch::Tensor& mask) {
    if (scores.sizes() != mask.sizes()) throw InvalidArgument("average_precision: score and mask shapes differ");
    const auto s = as_doubles(scores);
    const auto m = as_doubles(mask);
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });

    std::int64_t n_pos = 0;
    for (double v : m) n_pos += v > 0.5;
    if (n_pos == 0) return std::numeric_limits<double>::quiet_NaN();

    std::int64_t tp = 0, fp = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::int64_t hits = 0;
        while (j < order.size() && s[order[j]] == s[order[i]]) {
            const bool pos = m[order[j]] > 0.5;
            hits += pos;
            tp += pos;
            fp += !pos;
            ++j;
        }
        if (hits > 0) sum += double(hits) * (double(tp) / double(tp + fp));
        i = j;
    }
    return sum / double(n_pos);
}

}  // namespace uada
