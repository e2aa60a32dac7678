// Acceptance run: one PASS/FAIL line per criterion.
//
// Criteria 1-5 re-run the matching unit-test cases in a child process and time
// them. Criteria 6-8 train at the pinned desk scale below and compare methods.
// Criteria 9-10 check bitwise reproducibility and storage round trips.
//
// The exit status reflects the deterministic criteria (1-5, 9, 10) only. The
// empirical criteria 6-8 report PASS/FAIL but depend on training outcomes at
// a scale far below the reference one, so they never fail the process.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>

#include <unistd.h>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "uada/checkpoint.hpp"
#include "uada/evaluation.hpp"
#include "uada/phantom_data.hpp"
#include "uada/seeding.hpp"
#include "uada/trainer.hpp"

using namespace uada;

namespace {

// Tolerances and budgets, fixed.
constexpr double kLossSuiteSeconds = 60;
constexpr double kGradientSuiteSeconds = 300;
constexpr double kDiversityRatio = 10;
constexpr double kStructureDicePoints = 5;
constexpr double kDetSlack = 1.0;
constexpr double kTargetOnlyMargin = 3.0;
constexpr double kSweepGain = 1.0;

// Desk scale for the empirical criteria.
constexpr int kGrid = 32;
constexpr int kCvIterations = 600;
constexpr int kDiversityIterations = 1500;
constexpr int kDiversityStyles = 10;
constexpr int kDiversitySourcePatients = 10;
const std::vector<std::uint64_t> kSeeds{0, 1, 2};

DatasetConfig desk_dataset() {
    DatasetConfig c;
    c.grid_size = kGrid;
    c.n_source = 40;
    c.n_target = 20;
    c.labeled_fraction = 0.5;
    c.slices_per_patient = 4;
    c.seed = 0;
    return c;
}

TrainConfig desk_train(BaselineMode mode, int iterations) {
    TrainConfig c;
    c.mode = mode;
    c.iterations = iterations;
    c.pretrain_iterations = iterations;
    c.batch_size = 8;
    c.learning_rate = 1e-4;
    c.checkpoint_every = 0;
    c.translation.dim = 8;
    c.translation.mlp_dim = 32;
    c.translation.disc_dim = 8;
    c.segmentation.width = 8;
    return c;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome run_tests(const std::string& filter, double budget_seconds = 0) {
    const std::string cmd = std::string("\"") + UADA_TESTS_BINARY + "\" --minimal --no-intro " + filter;
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = std::system(cmd.c_str());
    const double dt = seconds_since(t0);
    std::ostringstream d;
    d << "unit cases " << (rc == 0 ? "passed" : "failed") << " in " << std::fixed << std::setprecision(1) << dt
      << " s";
    bool ok = rc == 0;
    if (budget_seconds > 0) {
        d << " (budget " << budget_seconds << " s)";
        ok = ok && dt < budget_seconds;
    }
    return {ok, d.str()};
}

bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    return std::equal(std::istreambuf_iterator<char>(fa), {}, std::istreambuf_iterator<char>(fb), {});
}

bool same_bits(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes() || a.scalar_type() != b.scalar_type()) return false;
    const auto ca = a.contiguous(), cb = b.contiguous();
    return std::memcmp(ca.data_ptr(), cb.data_ptr(), ca.nbytes()) == 0;
}

std::string fmt(double v, int digits = 2) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

class Acceptance {
public:
    Acceptance(std::filesystem::path work) : work_(std::move(work)) {}

    Outcome c6_diversity() {
        const auto& m = dataset();
        auto source = load_slices(m, {.domain = Domain::Source});
        source.resize(std::size_t(kDiversitySourcePatients) * m.config.slices_per_patient);
        log("criterion 6: training STOCH_TRANSLATION_SEG and DET_TRANSLATION_SEG");
        const auto stoch = train(desk_train(BaselineMode::StochTranslationSeg, kDiversityIterations), m).model;
        const auto det = train(desk_train(BaselineMode::DetTranslationSeg, kDiversityIterations), m).model;
        const auto rs = diversity_report(stoch, source, kDiversityStyles, 0, false);
        const auto rd = diversity_report(det, source, kDiversityStyles, 0, true);
        const double dice_gap = 100 * std::abs(rs.mean_structure_dice - rd.mean_structure_dice);
        const bool spread = rs.mean_pixel_std > kDiversityRatio * rd.mean_pixel_std;
        const bool structure = dice_gap <= kStructureDicePoints;
        return {spread && structure, "pixel std " + fmt(rs.mean_pixel_std, 4) + " vs " + fmt(rd.mean_pixel_std, 6) +
                                         ", structure dice " + fmt(100 * rs.mean_structure_dice) + " vs " +
                                         fmt(100 * rd.mean_structure_dice) + " (gap " + fmt(dice_gap) + ")"};
    }

    Outcome c7_ordering() {
        const auto& t = table();
        const double ra = t.row("STOCH_TRANSLATION_SEG_RA").summary(Metric::Ap).mean;
        const double st = t.row("STOCH_TRANSLATION_SEG").summary(Metric::Ap).mean;
        const double det = t.row("DET_TRANSLATION_SEG").summary(Metric::Ap).mean;
        const double to = t.row("TARGET_ONLY").summary(Metric::Ap).mean;
        const bool ok = ra >= st && st >= det - kDetSlack && ra - to >= kTargetOnlyMargin;
        return {ok, "AP RA " + fmt(ra) + ", STOCH " + fmt(st) + ", DET " + fmt(det) + ", TARGET_ONLY " + fmt(to)};
    }

    Outcome c8_sweep() {
        // The 100% synthesized point is the STOCH_TRANSLATION_SEG_RA row of the
        // cross-validation table: same runs, seeds and folds.
        const double full = table().row("STOCH_TRANSLATION_SEG_RA").summary(Metric::Ap).mean;
        log("criterion 8: SYNTH_GIVEN_REAL at 10%");
        SweepOptions o;
        o.grid = {10};
        o.eval.seeds = kSeeds;
        o.eval.log = log_fn();
        const auto sweep = ratio_sweep(dataset(), desk_train(BaselineMode::StochTranslationSegRa, kCvIterations),
                                       SweepAxis::SynthGivenReal, o);
        const double low = sweep.summary(10).mean;
        return {full - low >= kSweepGain, "AP at 100% " + fmt(full) + ", at 10% " + fmt(low)};
    }

    Outcome c9_determinism() {
        const auto& m = dataset();
        std::vector<std::string> bad;
        for (auto mode : {BaselineMode::TargetOnly, BaselineMode::Finetune, BaselineMode::RaOnly,
                          BaselineMode::DetTranslationSeg, BaselineMode::StochTranslationSeg,
                          BaselineMode::StochTranslationSegRa}) {
            auto c = desk_train(mode, 12);
            c.pretrain_iterations = 6;
            c.checkpoint_every = 5;
            c.seed = 17;
            const auto a = work_ / "det" / (to_string(mode) + "_a"), b = work_ / "det" / (to_string(mode) + "_b");
            train(c, m, {.run_dir = a});
            train(c, m, {.run_dir = b});
            if (!files_equal(a / "checkpoint.uadackpt", b / "checkpoint.uadackpt")) bad.push_back(to_string(mode));
        }
        return {bad.empty(), bad.empty() ? "6 modes reproduce their checkpoints bitwise"
                                         : "checkpoints differ for " + join(bad)};
    }

    Outcome c10_round_trips() {
        const auto& m = dataset();
        const auto& cfg = m.config;
        std::size_t mismatched = 0;
        const auto all = load_slices(m);
        for (std::size_t i = 0; i < all.size(); ++i) {
            const auto& r = m.records[i];
            const auto patient = std::uint64_t(std::stoi(r.patient_id.substr(1)));
            const auto slice = std::uint64_t(r.slice_index);
            const auto anatomy =
                generate_anatomy(derive_seed(cfg.seed, {std::uint64_t(r.domain), patient, slice}), cfg.grid_size);
            const auto expect = r.domain == Domain::Source
                                    ? render_source(anatomy, cfg.source_channels)
                                    : render_target(anatomy, derive_seed(cfg.seed, {7, patient, slice}),
                                                    cfg.target_channels);
            if (!same_bits(all[i].image, expect.image) || !same_bits(all[i].mask, expect.mask)) ++mismatched;
        }

        const auto c = desk_train(BaselineMode::StochTranslationSegRa, 4);
        const auto model = train(c, m).model;
        const auto ckpt = capture_model(model, c);
        const auto path = work_ / "roundtrip.uadackpt";
        save_checkpoint(path, ckpt);
        const auto back = load_checkpoint(path);
        bool tensors_ok = back.tensors.size() == ckpt.tensors.size();
        for (std::size_t i = 0; tensors_ok && i < ckpt.tensors.size(); ++i)
            tensors_ok = back.tensors[i].name == ckpt.tensors[i].name &&
                         same_bits(back.tensors[i].value, ckpt.tensors[i].value);
        const auto restored = model_from_checkpoint(back);
        const auto p0 = model.translation->parameters(), p1 = restored.translation->parameters();
        const auto s0 = model.segmentation->parameters(), s1 = restored.segmentation->parameters();
        bool params_ok = p0.size() == p1.size() && s0.size() == s1.size();
        for (std::size_t i = 0; params_ok && i < p0.size(); ++i) params_ok = same_bits(p0[i], p1[i]);
        for (std::size_t i = 0; params_ok && i < s0.size(); ++i) params_ok = same_bits(s0[i], s1[i]);

        return {mismatched == 0 && tensors_ok && params_ok,
                std::to_string(all.size() - mismatched) + "/" + std::to_string(all.size()) +
                    " slices re-render bitwise; checkpoint tensors " + (tensors_ok ? "exact" : "differ") +
                    ", restored parameters " + (params_ok ? "exact" : "differ")};
    }

private:
    const DatasetManifest& dataset() {
        if (!manifest_) manifest_ = build_dataset(desk_dataset(), work_ / "data");
        return *manifest_;
    }

    const MetricTable& table() {
        if (!table_) {
            log("criterion 7: cross-validating 4 methods, 3 seeds, 5 folds");
            std::vector<MethodSpec> methods;
            for (auto mode : {BaselineMode::TargetOnly, BaselineMode::DetTranslationSeg,
                              BaselineMode::StochTranslationSeg, BaselineMode::StochTranslationSegRa})
                methods.push_back({to_string(mode), desk_train(mode, kCvIterations)});
            EvalOptions o;
            o.seeds = kSeeds;
            o.log = log_fn();
            table_ = cross_validate(dataset(), methods, o);
            std::cerr << table_->text() << std::flush;
        }
        return *table_;
    }

    static void log(const std::string& s) { std::cerr << "  " << s << std::endl; }
    static std::function<void(const std::string&)> log_fn() { return [](const std::string& s) { log(s); }; }

    static std::string join(const std::vector<std::string>& v) {
        std::string out;
        for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
        return out;
    }

    std::filesystem::path work_;
    std::optional<DatasetManifest> manifest_;
    std::optional<MetricTable> table_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::set<int> only;
    std::string work, report = "acceptance_report.txt";
    app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
    app.add_option("--work", work, "scratch directory (default: a temporary one, removed afterwards)");
    app.add_option("--report", report, "copy of the PASS/FAIL lines")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    torch::set_num_threads(1);
    const bool temp = work.empty();
    const auto dir = temp ? std::filesystem::temp_directory_path() / ("uada_acceptance_" + std::to_string(::getpid()))
                          : std::filesystem::path(work);
    std::filesystem::create_directories(dir);
    Acceptance acc(dir);

    struct Criterion {
        int id;
        const char* name;
        bool gating;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "loss oracles", true, [] { return run_tests("--test-suite=losses", kLossSuiteSeconds); }},
        {2, "gradient checks", true, [] { return run_tests("--test-suite=gradients", kGradientSuiteSeconds); }},
        {3, "adapter properties", true,
         [] {
             return run_tests("\"--test-case=three-layer toy segmenter*,zero adapters make*,gradients on one domain*\"");
         }},
        {4, "adain statistics", true, [] { return run_tests("\"--test-case=adain output statistics*\""); }},
        {5, "metric oracles", true, [] { return run_tests("\"--test-case=counting metrics and AP equal brute-force*\""); }},
        {6, "diversity vs determinism", false, [&] { return acc.c6_diversity(); }},
        {7, "method ordering", false, [&] { return acc.c7_ordering(); }},
        {8, "synthesized-data trend", false, [&] { return acc.c8_sweep(); }},
        {9, "determinism", true, [&] { return acc.c9_determinism(); }},
        {10, "round trips", true, [&] { return acc.c10_round_trips(); }},
    };

    std::ofstream report_file(report, std::ios::trunc);
    auto emit = [&](const std::string& line) {
        std::cout << line << std::endl;
        report_file << line << std::endl;
    };

    bool gating_ok = true;
    int passed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        ++ran;
        passed += o.pass;
        if (c.gating && !o.pass) gating_ok = false;
        emit("criterion " + std::to_string(c.id) + " " + (o.pass ? "PASS" : "FAIL") + "  " + c.name + ": " +
             o.detail + " [" + fmt(seconds_since(t0), 0) + " s]");
    }
    emit(std::to_string(passed) + "/" + std::to_string(ran) + " criteria passed" +
         (gating_ok ? "" : "; deterministic criteria failed"));

    if (temp) {
        std::error_code ec;
        std::filesystem::remove_all(dir, ec);
    }
    return gating_ok ? 0 : 1;
}
