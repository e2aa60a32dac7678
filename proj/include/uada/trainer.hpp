#ifndef UADA_TRAINER_HPP
#define UADA_TRAINER_HPP

// Alternating optimization of the translation and segmentation networks, and
// the segmentation-only baseline regimes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"
#include "uada/checkpoint.hpp"
#include "uada/losses.hpp"
#include "uada/phantom_data.hpp"
#include "uada/segmentation_net.hpp"
#include "uada/translation_net.hpp"

namespace uada {

enum class BaselineMode {
    TargetOnly,             // segmenter on labeled target only
    Finetune,               // source pretraining, then all weights on target
    RaOnly,                 // source pretraining, then adapters + target stem only
    DetTranslationSeg,      // translation with the style fixed at zero + synthesized-image dice
    StochTranslationSeg,    // Gaussian style sampling + synthesized-image dice
    StochTranslationSegRa,  // as above with residual adapters
};

std::string to_string(BaselineMode m);
BaselineMode baseline_mode_from_string(const std::string& s);
bool uses_translation(BaselineMode m);
bool uses_adapters(BaselineMode m);

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 32;
    int iterations = 10000;
    int pretrain_iterations = 2000;  // source pretraining for Finetune / RaOnly
    double beta1 = 0.5;
    double beta2 = 0.999;
    LossWeights weights;
    double synth_to_real = 0.5;  // expected synthesized share of a segmentation mini-batch
    std::uint64_t seed = 0;
    BaselineMode mode = BaselineMode::StochTranslationSegRa;
    int checkpoint_every = 1000;
    bool non_saturating_gan = false;
    DiceMode dice_mode = DiceMode::BatchGlobal;
    int seg_warmup = 0;            // iterations before segmentation gradients reach the translator
    double real_fraction = 1.0;    // share of labeled target patients used
    double synth_fraction = 1.0;   // share of source patients used
    bool batch_ratio_from_pools = false;  // synth_to_real := |source pool| / (|source pool| + |real pool|)
    TranslationConfig translation;
    SegConfig segmentation;

    void validate() const;  // throws ConfigError
};

struct Model {
    TranslationNet translation{nullptr};  // null for segmentation-only regimes
    SegNet segmentation{nullptr};
};

// Fresh networks; initialization is a pure function of config.seed.
Model make_model(const TrainConfig& config, bool with_translation);

// Image tensors of one regime, stacked.
struct TrainPools {
    torch::Tensor source_images, source_masks;  // [N,C,H,W], [N,H,W] float
    torch::Tensor target_images;                // every training-fold target slice (adversarial pool)
    torch::Tensor real_images, real_masks;      // labeled training-fold target slices
};

// `folds` are the target folds available for training (all when empty).
TrainPools make_pools(const DatasetManifest& manifest, const TrainConfig& config, const std::vector<int>& folds = {});

struct StepBatch {
    torch::Tensor source_images, source_masks;
    torch::Tensor target_images;
    torch::Tensor real_images, real_masks;
    int n_synth = 0;  // leading source images whose translations join the segmentation batch
};

// Deterministic mini-batch sampler (with replacement).
class BatchSampler {
public:
    BatchSampler(const TrainPools& pools, const TrainConfig& config);
    StepBatch next();
    StepBatch next_source_only();
    StepBatch next_real_only();  // B labeled target slices, no source or adversarial part
    double synth_share() const noexcept { return ratio_; }

private:
    torch::Tensor pick(const torch::Tensor& pool, const std::vector<int64_t>& idx) const;
    std::vector<int64_t> draw(int64_t pool_size, int count);

    const TrainPools* pools_;
    int batch_;
    double ratio_;
    std::mt19937_64 rng_;
};

struct StepReport {
    LossReport objective;   // weighted generator-side objective
    double seg_real = 0.0;  // dice on the labeled real part of the batch
    double disc = 0.0;      // discriminator loss (negated adversarial value)
};

// Optimizers and trainable-parameter selection for one regime phase.
class Trainer {
public:
    enum class Phase { SourcePretrain, Target, Joint };

    Trainer(Model model, TrainConfig config, Phase phase);

    Model& model() noexcept { return model_; }
    const TrainConfig& config() const noexcept { return config_; }
    Phase phase() const noexcept { return phase_; }

    /// One discriminator update then one joint generator/encoder/segmenter
    /// update (Joint), or one segmentation update (other phases).
    StepReport train_step(const StepBatch& batch, at::Generator& rng, int iteration);

    std::string last_good_checkpoint;

private:
    StepReport joint_step(const StepBatch& batch, at::Generator& rng, int iteration);
    StepReport segmentation_step(const StepBatch& batch);
    void check_gradients(const std::vector<torch::Tensor>& params, const char* what) const;

    Model model_;
    TrainConfig config_;
    Phase phase_;
    std::vector<torch::Tensor> gen_params_, dis_params_;
    std::unique_ptr<torch::optim::Adam> gen_opt_, dis_opt_;
};

struct StepRecord {
    int step = 0;
    StepReport report;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<std::pair<int, double>> validation_ap;  // (step, mean AP) when validation data is given
};

struct TrainOptions {
    std::vector<int> folds;                        // training target folds (all when empty)
    std::optional<std::filesystem::path> run_dir;  // checkpoints + CSV log when set
    std::vector<PhantomSlice> validation;          // optional labeled target slices
    int validate_every = 0;
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    Model model;
    TrainHistory history;
};

TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, const TrainOptions& options = {});
TrainResult pretrain_source(const TrainConfig& config, const DatasetManifest& manifest,
                            const TrainOptions& options = {});

// Checkpoint helpers for a trained model, with the config echoed in the header.
Checkpoint capture_model(const Model& model, const TrainConfig& config);
Model model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* config_out = nullptr);

// CSV header and row for the training log.
std::string training_log_header();
std::string training_log_row(const StepRecord& record);

}  // namespace uada

#endif  // UADA_TRAINER_HPP
