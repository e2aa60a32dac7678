#include "uada/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "uada/config.hpp"
#include "uada/errors.hpp"
#include "uada/evaluation.hpp"
#include "uada/seeding.hpp"

namespace uada {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kBatchStream = 0xBA7C;
constexpr std::uint64_t kStyleStream = 0x57;
constexpr std::uint64_t kSubsetStream = 0x5B5E;

struct ModeName {
    BaselineMode mode;
    const char* name;
};
constexpr ModeName kModeNames[] = {
    {BaselineMode::TargetOnly, "TARGET_ONLY"},
    {BaselineMode::Finetune, "FINETUNE"},
    {BaselineMode::RaOnly, "RA_ONLY"},
    {BaselineMode::DetTranslationSeg, "DET_TRANSLATION_SEG"},
    {BaselineMode::StochTranslationSeg, "STOCH_TRANSLATION_SEG"},
    {BaselineMode::StochTranslationSegRa, "STOCH_TRANSLATION_SEG_RA"},
};

void set_requires_grad(const std::vector<torch::Tensor>& params, bool on) {
    for (auto p : params) p.set_requires_grad(on);
}

void append(std::vector<torch::Tensor>& dst, const std::vector<torch::Tensor>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

// Keeps ceil(fraction * n) of the given patients, chosen by a seeded
// permutation so that smaller fractions are prefixes of larger ones.
std::set<std::string> subset_patients(std::vector<std::string> ids, double fraction, std::uint64_t seed,
                                      std::uint64_t tag) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::mt19937_64 rng(derive_seed(seed, {kSubsetStream, tag}));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * double(ids.size()) - 1e-9));
    return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(keep, ids.size()))};
}

void stack_into(const std::vector<const PhantomSlice*>& slices, torch::Tensor& images, torch::Tensor* masks) {
    if (slices.empty()) return;
    std::vector<torch::Tensor> imgs, msks;
    for (const auto* s : slices) {
        imgs.push_back(s->image);
        msks.push_back(s->mask.to(torch::kFloat32));
    }
    images = torch::stack(imgs);
    if (masks) *masks = torch::stack(msks);
}

int64_t rows(const torch::Tensor& t) { return t.defined() ? t.size(0) : 0; }

TrainConfig effective_config(const TrainConfig& config, const DatasetManifest& manifest) {
    TrainConfig c = config;
    c.translation.source_channels = c.segmentation.source_channels = manifest.config.source_channels;
    c.translation.target_channels = c.segmentation.target_channels = manifest.config.target_channels;
    c.validate();
    return c;
}

at::Generator style_generator(const TrainConfig& c) {
    return at::make_generator<at::CPUGeneratorImpl>(derive_seed(c.seed, {kStyleStream}));
}

class RunWriter {
public:
    RunWriter(const std::optional<std::filesystem::path>& dir, const TrainConfig& config, int every)
        : dir_(dir), config_(config), every_(every) {
        if (!dir_) return;
        std::error_code ec;
        std::filesystem::create_directories(*dir_, ec);
        if (ec) throw IoError("cannot create run directory " + dir_->string() + ": " + ec.message());
        log_.open(*dir_ / "train_log.csv", std::ios::trunc);
        if (!log_) throw IoError("cannot write training log in " + dir_->string());
        log_ << training_log_header() << '\n';
    }

    void step(const StepRecord& r, const Model& model, Trainer& trainer) {
        if (!dir_) return;
        log_ << training_log_row(r) << '\n';
        if (every_ > 0 && (r.step + 1) % every_ == 0) {
            log_.flush();
            save(model, trainer);
        }
    }

    void finish(const Model& model, Trainer* trainer) {
        if (!dir_) return;
        log_.flush();
        if (!log_) throw IoError("failed writing training log in " + dir_->string());
        const auto path = *dir_ / "checkpoint.uadackpt";
        save_checkpoint(path, capture_model(model, config_));
        if (trainer) trainer->last_good_checkpoint = path.string();
    }

private:
    void save(const Model& model, Trainer& trainer) {
        const auto path = *dir_ / "checkpoint.uadackpt";
        save_checkpoint(path, capture_model(model, config_));
        trainer.last_good_checkpoint = path.string();
    }

    std::optional<std::filesystem::path> dir_;
    TrainConfig config_;
    int every_;
    std::ofstream log_;
};

using Clock = std::chrono::steady_clock;

void run_phase(Trainer& trainer, int iterations, const std::function<StepBatch()>& next, at::Generator& rng,
               const TrainOptions& options, RunWriter& writer, TrainHistory& history, int step_offset) {
    const auto start = Clock::now();
    for (int it = 0; it < iterations; ++it) {
        const auto batch = next();
        StepRecord rec;
        rec.step = step_offset + it;
        rec.report = trainer.train_step(batch, rng, it);
        rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
        history.steps.push_back(rec);
        writer.step(rec, trainer.model(), trainer);
        if (options.on_step) options.on_step(rec);
        if (options.validate_every > 0 && !options.validation.empty() && (it + 1) % options.validate_every == 0) {
            const auto scores = evaluate_segmenter(trainer.model().segmentation, options.validation);
            history.validation_ap.emplace_back(rec.step, scores.ap);
        }
    }
}

}  // namespace

std::string to_string(BaselineMode m) {
    for (const auto& e : kModeNames)
        if (e.mode == m) return e.name;
    return "UNKNOWN";
}

BaselineMode baseline_mode_from_string(const std::string& s) {
    for (const auto& e : kModeNames)
        if (s == e.name) return e.mode;
    throw InvalidArgument("unknown baseline mode '" + s + "'");
}

bool uses_translation(BaselineMode m) {
    return m == BaselineMode::DetTranslationSeg || m == BaselineMode::StochTranslationSeg ||
           m == BaselineMode::StochTranslationSegRa;
}

bool uses_adapters(BaselineMode m) { return m == BaselineMode::RaOnly || m == BaselineMode::StochTranslationSegRa; }

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (iterations < 0 || pretrain_iterations < 0) throw ConfigError("iteration counts must be >= 0");
    if (!(synth_to_real >= 0.0 && synth_to_real <= 1.0)) throw ConfigError("synth_to_real must be in [0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(real_fraction > 0.0 && real_fraction <= 1.0) || !(synth_fraction > 0.0 && synth_fraction <= 1.0))
        throw ConfigError("real_fraction and synth_fraction must be in (0, 1]");
    for (double w : {weights.gan, weights.recon, weights.content, weights.style, weights.cycle, weights.seg_synth})
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    if (seg_warmup < 0 || checkpoint_every < 0) throw ConfigError("seg_warmup and checkpoint_every must be >= 0");
}

Model make_model(const TrainConfig& config, bool with_translation) {
    // Initialization draws from the global generator; serialize concurrent callers.
    static std::mutex init_mutex;
    std::lock_guard lock(init_mutex);
    torch::manual_seed(derive_seed(config.seed, {kInitStream}));
    Model m;
    if (with_translation) m.translation = TranslationNet(config.translation);
    m.segmentation = SegNet(config.segmentation);
    return m;
}

TrainPools make_pools(const DatasetManifest& manifest, const TrainConfig& config, const std::vector<int>& folds) {
    std::vector<int> train_folds = folds;
    if (train_folds.empty())
        for (const auto& [f, patients] : manifest.folds) train_folds.push_back(f);

    TrainPools pools;
    const bool needs_source = config.mode != BaselineMode::TargetOnly;
    std::vector<PhantomSlice> source;
    if (needs_source) source = load_slices(manifest, {.domain = Domain::Source});
    const auto target = load_slices(manifest, {.domain = Domain::Target, .folds = train_folds});

    std::vector<std::string> source_ids, labeled_ids;
    for (const auto& s : source) source_ids.push_back(s.patient_id);
    for (const auto& s : target)
        if (s.labeled) labeled_ids.push_back(s.patient_id);
    const auto keep_source = subset_patients(source_ids, config.synth_fraction, config.seed, 1);
    const auto keep_real = subset_patients(labeled_ids, config.real_fraction, config.seed, 2);

    std::vector<const PhantomSlice*> src, tgt, real;
    for (const auto& s : source)
        if (keep_source.count(s.patient_id)) src.push_back(&s);
    for (const auto& s : target) {
        tgt.push_back(&s);
        if (s.labeled && keep_real.count(s.patient_id)) real.push_back(&s);
    }
    stack_into(src, pools.source_images, &pools.source_masks);
    stack_into(tgt, pools.target_images, nullptr);
    stack_into(real, pools.real_images, &pools.real_masks);
    return pools;
}

BatchSampler::BatchSampler(const TrainPools& pools, const TrainConfig& config)
    : pools_(&pools), batch_(config.batch_size), ratio_(config.synth_to_real),
      rng_(derive_seed(config.seed, {kBatchStream})) {
    if (config.batch_ratio_from_pools) {
        const double ns = double(rows(pools.source_images)), nr = double(rows(pools.real_images));
        ratio_ = ns + nr > 0 ? ns / (ns + nr) : 0.0;
    }
}

std::vector<int64_t> BatchSampler::draw(int64_t pool_size, int count) {
    std::vector<int64_t> idx;
    if (pool_size == 0) return idx;
    std::uniform_int_distribution<int64_t> pick(0, pool_size - 1);
    for (int i = 0; i < count; ++i) idx.push_back(pick(rng_));
    return idx;
}

torch::Tensor BatchSampler::pick(const torch::Tensor& pool, const std::vector<int64_t>& idx) const {
    if (!pool.defined() || idx.empty()) return {};
    return pool.index_select(0, torch::tensor(idx, torch::kInt64));
}

StepBatch BatchSampler::next() {
    StepBatch b;
    const int64_t ns = rows(pools_->source_images), nr = rows(pools_->real_images);
    const double expected = ratio_ * batch_;
    int n_synth = static_cast<int>(std::floor(expected));
    if (std::bernoulli_distribution(expected - n_synth)(rng_)) ++n_synth;
    if (nr == 0) n_synth = batch_;
    if (ns == 0) n_synth = 0;
    b.n_synth = n_synth;

    const auto src = draw(ns, batch_);
    b.source_images = pick(pools_->source_images, src);
    b.source_masks = pick(pools_->source_masks, src);
    b.target_images = pick(pools_->target_images, draw(rows(pools_->target_images), batch_));
    const auto real = draw(nr, batch_ - n_synth);
    b.real_images = pick(pools_->real_images, real);
    b.real_masks = pick(pools_->real_masks, real);
    return b;
}

StepBatch BatchSampler::next_real_only() {
    StepBatch b;
    const auto real = draw(rows(pools_->real_images), batch_);
    b.real_images = pick(pools_->real_images, real);
    b.real_masks = pick(pools_->real_masks, real);
    return b;
}

StepBatch BatchSampler::next_source_only() {
    StepBatch b;
    const auto src = draw(rows(pools_->source_images), batch_);
    b.source_images = pick(pools_->source_images, src);
    b.source_masks = pick(pools_->source_masks, src);
    return b;
}

Trainer::Trainer(Model model, TrainConfig config, Phase phase)
    : model_(std::move(model)), config_(std::move(config)), phase_(phase) {
    auto& seg = model_.segmentation;
    if (!seg) throw InvalidArgument("Trainer: model has no segmentation network");
    if (phase_ == Phase::Joint && !model_.translation)
        throw InvalidArgument("Trainer: joint phase needs a translation network");

    set_requires_grad(seg->parameters(), false);
    const bool adapters = uses_adapters(config_.mode);
    switch (phase_) {
        case Phase::SourcePretrain:
            append(gen_params_, seg->backbone_parameters());
            append(gen_params_, seg->stem_parameters(Domain::Source));
            break;
        case Phase::Target:
            if (config_.mode == BaselineMode::RaOnly) {
                append(gen_params_, seg->adapter_parameters(AdapterDomain::Real));
            } else {
                append(gen_params_, seg->backbone_parameters());
                if (adapters) append(gen_params_, seg->adapter_parameters(AdapterDomain::Real));
            }
            append(gen_params_, seg->stem_parameters(Domain::Target));
            break;
        case Phase::Joint:
            append(gen_params_, model_.translation->generator_parameters());
            append(gen_params_, seg->backbone_parameters());
            append(gen_params_, seg->stem_parameters(Domain::Target));
            if (adapters) {
                append(gen_params_, seg->adapter_parameters(AdapterDomain::Synthesized));
                append(gen_params_, seg->adapter_parameters(AdapterDomain::Real));
            }
            dis_params_ = model_.translation->discriminator_parameters();
            break;
    }
    set_requires_grad(gen_params_, true);

    const auto opts = torch::optim::AdamOptions(config_.learning_rate).betas({config_.beta1, config_.beta2});
    gen_opt_ = std::make_unique<torch::optim::Adam>(gen_params_, opts);
    if (!dis_params_.empty()) dis_opt_ = std::make_unique<torch::optim::Adam>(dis_params_, opts);
}

void Trainer::check_gradients(const std::vector<torch::Tensor>& params, const char* what) const {
    for (const auto& p : params)
        if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>())
            throw PoisonedLoss(std::string(what) + " gradient", last_good_checkpoint);
}

StepReport Trainer::train_step(const StepBatch& batch, at::Generator& rng, int iteration) {
    torch::AutoGradMode grad_on(true);  // callers may hold a NoGradGuard
    return phase_ == Phase::Joint ? joint_step(batch, rng, iteration) : segmentation_step(batch);
}

StepReport Trainer::segmentation_step(const StepBatch& batch) {
    const bool source = phase_ == Phase::SourcePretrain;
    const auto& images = source ? batch.source_images : batch.real_images;
    const auto& masks = source ? batch.source_masks : batch.real_masks;
    if (!images.defined() || images.size(0) == 0) throw ConfigError("segmentation step received an empty batch");

    auto& seg = model_.segmentation;
    const auto pred = seg->segment(images, source ? AdapterDomain::Synthesized : AdapterDomain::Real,
                                   source ? Domain::Source : Domain::Target);
    const auto loss = dice_loss(pred, masks, config_.dice_mode);
    StepReport r;
    r.seg_real = loss.item<double>();
    if (!std::isfinite(r.seg_real)) throw PoisonedLoss("seg_real", last_good_checkpoint);

    gen_opt_->zero_grad();
    loss.backward();
    check_gradients(gen_params_, "segmentation");
    gen_opt_->step();
    return r;
}

StepReport Trainer::joint_step(const StepBatch& batch, at::Generator& rng, int iteration) {
    auto& net = model_.translation;
    auto& seg = model_.segmentation;
    const bool det = config_.mode == BaselineMode::DetTranslationSeg;
    const auto& w = config_.weights;
    const auto& x_s = batch.source_images;
    const auto& x_t = batch.target_images;
    if (!x_s.defined() || !x_t.defined()) throw ConfigError("joint step needs source and target images");
    const int d = net->config().style_dim;

    // Fresh prior samples for both directions every step (zeros when deterministic).
    const auto style_t = det ? torch::zeros({x_s.size(0), d}) : sample_style(rng, d, x_s.size(0));
    const auto style_s = det ? torch::zeros({x_t.size(0), d}) : sample_style(rng, d, x_t.size(0));

    StepReport report;
    if (w.gan > 0.0) {
        torch::Tensor fake_t, fake_s;
        {
            torch::NoGradGuard no_grad;
            fake_t = net->translate(x_s, Domain::Source, Domain::Target, style_t);
            fake_s = net->translate(x_t, Domain::Target, Domain::Source, style_s);
        }
        const auto d_loss =
            w.gan * (gan_loss_discriminator(net->discriminate(x_t, Domain::Target), net->discriminate(fake_t, Domain::Target)) +
                     gan_loss_discriminator(net->discriminate(x_s, Domain::Source), net->discriminate(fake_s, Domain::Source)));
        report.disc = d_loss.item<double>();
        if (!std::isfinite(report.disc)) throw PoisonedLoss("discriminator", last_good_checkpoint);
        dis_opt_->zero_grad();
        d_loss.backward();
        check_gradients(dis_params_, "discriminator");
        dis_opt_->step();
    }

    // Generator side: discriminators act as fixed critics.
    set_requires_grad(dis_params_, false);
    const auto dir_s = directional_terms(net, x_s, Domain::Source, style_t, det);
    const auto dir_t = directional_terms(net, x_t, Domain::Target, style_s, det);

    LossTerms terms;
    terms.recon_s = dir_s.self_recon;
    terms.recon_t = dir_t.self_recon;
    terms.content_s = dir_s.content_recon;
    terms.content_t = dir_t.content_recon;
    terms.style_t = dir_s.style_recon;
    terms.style_s = dir_t.style_recon;
    terms.cycle_s = dir_s.cycle;
    terms.cycle_t = dir_t.cycle;
    if (w.gan > 0.0) {
        terms.gan_t = gan_loss_generator(net->discriminate(dir_s.translated, Domain::Target), config_.non_saturating_gan);
        terms.gan_s = gan_loss_generator(net->discriminate(dir_t.translated, Domain::Source), config_.non_saturating_gan);
    }
    if (batch.n_synth > 0) {
        auto synth = dir_s.translated.narrow(0, 0, batch.n_synth);
        if (iteration < config_.seg_warmup) synth = synth.detach();
        terms.seg_synth = dice_loss(seg->segment(synth, AdapterDomain::Synthesized),
                                    batch.source_masks.narrow(0, 0, batch.n_synth), config_.dice_mode);
    }

    Objective objective;
    try {
        objective = total_objective(terms, w);
    } catch (const PoisonedLoss& e) {
        set_requires_grad(dis_params_, true);
        throw PoisonedLoss(e.term(), last_good_checkpoint);
    }
    auto loss = objective.total;
    if (batch.real_images.defined() && batch.real_images.size(0) > 0) {
        const auto real = dice_loss(seg->segment(batch.real_images, AdapterDomain::Real), batch.real_masks,
                                    config_.dice_mode);
        report.seg_real = real.item<double>();
        if (!std::isfinite(report.seg_real)) {
            set_requires_grad(dis_params_, true);
            throw PoisonedLoss("seg_real", last_good_checkpoint);
        }
        loss = loss + real;
    }
    report.objective = objective.report;

    gen_opt_->zero_grad();
    loss.backward();
    set_requires_grad(dis_params_, true);
    check_gradients(gen_params_, "generator");
    gen_opt_->step();
    return report;
}

TrainResult pretrain_source(const TrainConfig& config, const DatasetManifest& manifest, const TrainOptions& options) {
    TrainConfig cfg = effective_config(config, manifest);
    cfg.mode = config.mode == BaselineMode::RaOnly ? BaselineMode::RaOnly : BaselineMode::Finetune;
    const auto pools = make_pools(manifest, cfg, options.folds);
    if (rows(pools.source_images) == 0) throw ConfigError("source pretraining needs source slices");
    BatchSampler sampler(pools, cfg);
    auto rng = style_generator(cfg);

    TrainResult result;
    Trainer trainer(make_model(cfg, false), cfg, Trainer::Phase::SourcePretrain);
    RunWriter writer(options.run_dir, cfg, cfg.checkpoint_every);
    run_phase(trainer, cfg.pretrain_iterations, [&] { return sampler.next_source_only(); }, rng, options, writer,
              result.history, 0);
    writer.finish(trainer.model(), &trainer);
    result.model = trainer.model();
    return result;
}

TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, const TrainOptions& options) {
    const TrainConfig cfg = effective_config(config, manifest);
    const auto pools = make_pools(manifest, cfg, options.folds);
    if (rows(pools.real_images) == 0) throw ConfigError("no labeled target data in the training folds");
    BatchSampler sampler(pools, cfg);
    auto rng = style_generator(cfg);
    RunWriter writer(options.run_dir, cfg, cfg.checkpoint_every);

    TrainResult result;
    if (uses_translation(cfg.mode)) {
        if (rows(pools.source_images) == 0) throw ConfigError("translation regimes need source slices");
        Trainer trainer(make_model(cfg, true), cfg, Trainer::Phase::Joint);
        run_phase(trainer, cfg.iterations, [&] { return sampler.next(); }, rng, options, writer, result.history, 0);
        writer.finish(trainer.model(), &trainer);
        result.model = trainer.model();
        return result;
    }

    Model model = make_model(cfg, false);
    int offset = 0;
    if (cfg.mode == BaselineMode::Finetune || cfg.mode == BaselineMode::RaOnly) {
        if (rows(pools.source_images) == 0) throw ConfigError("source pretraining needs source slices");
        Trainer pre(model, cfg, Trainer::Phase::SourcePretrain);
        run_phase(pre, cfg.pretrain_iterations, [&] { return sampler.next_source_only(); }, rng, options, writer,
                  result.history, 0);
        model = pre.model();
        offset = cfg.pretrain_iterations;
    }
    Trainer trainer(model, cfg, Trainer::Phase::Target);
    run_phase(trainer, cfg.iterations, [&] { return sampler.next_real_only(); }, rng, options, writer, result.history, offset);
    writer.finish(trainer.model(), &trainer);
    result.model = trainer.model();
    return result;
}

Checkpoint capture_model(const Model& model, const TrainConfig& config) {
    return capture(model.translation ? &model.translation : nullptr, &model.segmentation, to_json(config));
}

Model model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* config_out) {
    const TrainConfig config = train_config_from_json(ckpt.config);
    bool with_translation = false;
    for (const auto& t : ckpt.tensors)
        if (t.name.rfind("translation/", 0) == 0) with_translation = true;
    Model m = make_model(config, with_translation);
    restore(ckpt, with_translation ? &m.translation : nullptr, &m.segmentation);
    if (config_out) *config_out = config;
    return m;
}

std::string training_log_header() {
    std::string h = "step";
    for (const auto& [name, v] : LossReport{}.items()) h += "," + name;
    return h + ",seg_real,disc,wall_seconds";
}

std::string training_log_row(const StepRecord& r) {
    std::ostringstream os;
    os.precision(9);
    os << r.step;
    for (const auto& [name, v] : r.report.objective.items()) os << ',' << v;
    os << ',' << r.report.seg_real << ',' << r.report.disc << ',' << r.wall_seconds;
    return os.str();
}

}  // namespace uada
