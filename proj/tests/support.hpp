#ifndef UADA_TESTS_SUPPORT_HPP
#define UADA_TESTS_SUPPORT_HPP

// Shared fixtures and independent reference implementations for the tests.
// Oracles here are written with plain loops over std::vector so that they do
// not share code paths with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <torch/torch.h>

#include "uada/phantom_data.hpp"
#include "uada/segmentation_net.hpp"
#include "uada/trainer.hpp"
#include "uada/translation_net.hpp"

namespace uada::test {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("uada_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::vector<double> values(const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kFloat64).contiguous().flatten();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes() || a.scalar_type() != b.scalar_type()) return false;
    const auto x = a.contiguous(), y = b.contiguous();
    return std::memcmp(x.data_ptr(), y.data_ptr(), x.numel() * x.element_size()) == 0;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

// --- metric oracles -------------------------------------------------------

struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts brute_confusion(const std::vector<double>& pred, const std::vector<double>& mask, double thr) {
    Counts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] >= thr, y = mask[i] > 0.5;
        if (p && y) ++c.tp;
        else if (p) ++c.fp;
        else if (y) ++c.fn;
        else ++c.tn;
    }
    return c;
}

// AP by sweeping every distinct score as a threshold (predict >= t) from the
// highest down: sum over thresholds of (recall step) * precision.
inline double ap_by_thresholds(const std::vector<double>& scores, const std::vector<double>& mask) {
    std::vector<double> thr = scores;
    std::sort(thr.begin(), thr.end(), std::greater<>());
    thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
    double n_pos = 0;
    for (double m : mask) n_pos += m > 0.5;
    if (n_pos == 0) return std::nan("");
    double ap = 0, prev_tp = 0;
    for (double t : thr) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (scores[i] >= t) (mask[i] > 0.5 ? tp : fp) += 1;
        ap += (tp - prev_tp) / n_pos * (tp / (tp + fp));
        prev_tp = tp;
    }
    return ap;
}

// --- loss oracles -----------------------------------------------------------

inline double dice_oracle(const std::vector<double>& p, const std::vector<double>& y) {
    double py = 0, pp = 0, yy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        py += p[i] * y[i];
        pp += p[i] * p[i];
        yy += y[i] * y[i];
    }
    return -2.0 * py / (pp + yy + 1e-7);
}

inline double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / double(a.size());
}

// --- finite differences -----------------------------------------------------

struct GradCheck {
    double max_rel = 0;
    int checked = 0;
    int skipped_kinks = 0;
};

// Compares d loss / d p for every entry of the given f64 parameters against
// the central difference with step h. L1 terms are piecewise smooth, so a
// coordinate whose stencil straddles a kink is detected and skipped (and
// counted). For a smooth function the central quotients at h and h/2 agree to
// O(h^2), and the one-sided jump (fwd - bwd) scales linearly with the step, so
// it halves at h/2. A kink breaks one of the two.
inline GradCheck finite_difference_check(const std::function<torch::Tensor()>& loss_fn,
                                         const std::vector<torch::Tensor>& params, double h = 1e-3) {
    for (auto p : params)
        if (p.grad().defined()) p.mutable_grad().zero_();
    loss_fn().backward();
    GradCheck r;
    torch::NoGradGuard no_grad;
    const double f0 = loss_fn().item<double>();
    for (auto p : params) {
        const auto g = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
        auto flat = p.view({-1});
        const auto gflat = g.view({-1});
        for (int64_t i = 0; i < flat.numel(); ++i) {
            const double orig = flat[i].item<double>();
            auto at = [&](double delta) {
                flat[i] = orig + delta;
                return loss_fn().item<double>();
            };
            const double fp = at(h), fm = at(-h), fp2 = at(h / 2), fm2 = at(-h / 2);
            flat[i] = orig;
            const double fd = (fp - fm) / (2 * h), fd_half = (fp2 - fm2) / h;
            const double jump = (fp - 2 * f0 + fm) / h, jump_half = (fp2 - 2 * f0 + fm2) / (h / 2);
            const double an = gflat[i].item<double>();
            const double scale = std::max({std::abs(fd), std::abs(an), 1e-4});
            if (std::abs(fd - fd_half) > 2e-5 * scale || std::abs(jump - 2 * jump_half) > 2e-5 * scale) {
                ++r.skipped_kinks;
                continue;
            }
            r.max_rel = std::max(r.max_rel, std::abs(fd - an) / scale);
            ++r.checked;
        }
    }
    return r;
}

inline int64_t count_params(const std::vector<torch::Tensor>& ps) {
    int64_t n = 0;
    for (const auto& p : ps) n += p.numel();
    return n;
}

// --- small configurations ---------------------------------------------------

inline TranslationConfig toy_translation_config() {
    TranslationConfig c;
    c.source_channels = 1;
    c.target_channels = 1;
    c.dim = 1;
    c.n_res = 1;
    c.style_dim = 2;
    c.mlp_dim = 4;
    c.disc_dim = 1;
    c.stem_kernel = 3;
    c.activation = Activation::Softplus;
    return c;
}

inline DatasetConfig small_dataset_config() {
    DatasetConfig c;
    c.n_source = 10;
    c.n_target = 10;
    c.labeled_fraction = 0.5;
    c.slices_per_patient = 2;
    c.grid_size = 32;
    return c;
}

inline TrainConfig small_train_config() {
    TrainConfig c;
    c.batch_size = 4;
    c.iterations = 3;
    c.pretrain_iterations = 2;
    c.checkpoint_every = 0;
    c.translation.dim = 4;
    c.translation.n_res = 1;
    c.translation.mlp_dim = 16;
    c.translation.disc_dim = 4;
    c.segmentation.width = 4;
    return c;
}

// A dataset shared by the slower tests, built once per process.
inline const DatasetManifest& shared_dataset() {
    static TempDir dir("shared");
    static DatasetManifest m = build_dataset(small_dataset_config(), dir / "data");
    return m;
}

}  // namespace uada::test

#endif  // UADA_TESTS_SUPPORT_HPP
