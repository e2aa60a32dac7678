#ifndef UADA_EVALUATION_HPP
#define UADA_EVALUATION_HPP

// Patient-level evaluation, k-fold cross-validation tables, translation
// diversity diagnostics and data-ratio sweeps.
//
// Metrics are pooled over all voxels of a patient, averaged over the
// patients of a fold, and reported in percent. Fold spread is the sample
// (n-1) standard deviation. Patients without lesion voxels have no AP and are
// left out of the AP mean (counted in FoldScores::n_ap_excluded).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uada/metrics.hpp"
#include "uada/phantom_data.hpp"
#include "uada/segmentation_net.hpp"
#include "uada/trainer.hpp"

namespace uada {

struct PatientScores {
    std::string patient_id;
    ConfusionCounts counts;
    double recall = 0, precision = 0, dsc = 0, ap = 0;  // fractions; ap NaN without lesions
};

struct FoldScores {
    double recall = 0, precision = 0, dsc = 0, ap = 0;  // percent, patient means
    int n_patients = 0;
    int n_ap_excluded = 0;
    std::vector<PatientScores> patients;
};

/// Scores target slices through the real-image adapter.
FoldScores evaluate_segmenter(SegNet& seg, const std::vector<PhantomSlice>& slices,
                              AdapterDomain domain = AdapterDomain::Real);

struct MeanStd {
    double mean = 0, std = 0;
};
MeanStd mean_std(const std::vector<double>& values);  // sample std; 0 for fewer than two values

/// "69.9 (± 9.0)"
std::string format_mean_std(double mean, double std);

enum class Metric { Recall, Precision, Dsc, Ap };
inline constexpr Metric kMetrics[] = {Metric::Recall, Metric::Precision, Metric::Dsc, Metric::Ap};
std::string metric_name(Metric m);

struct MethodRow {
    std::string method;
    std::vector<int> folds;
    std::vector<FoldScores> per_fold;  // seed-averaged fold scores, aligned with `folds`

    std::vector<double> values(Metric m) const;
    MeanStd summary(Metric m) const { return mean_std(values(m)); }
};

struct MetricTable {
    std::vector<MethodRow> rows;
    int n_seeds = 1;

    std::string text() const;  // aligned, one line per method
    std::string csv() const;   // per-fold values plus mean/std rows
    const MethodRow& row(const std::string& method) const;
};

struct MethodSpec {
    std::string name;
    TrainConfig config;
};

struct EvalOptions {
    std::vector<int> eval_folds;               // all manifest folds when empty
    std::vector<std::uint64_t> seeds{0};
    int jobs = 1;                              // concurrent fold trainings
    std::function<void(const std::string&)> log;
};

/// Seed of the run that evaluates `fold` for the given base seed.
std::uint64_t fold_seed(std::uint64_t seed, int fold);

/// For each method, seed and evaluation fold f: train on the other target
/// folds (plus source data as the method requires) and score fold f.
MetricTable cross_validate(const DatasetManifest& manifest, const std::vector<MethodSpec>& methods,
                           const EvalOptions& options = {});

struct DiversityReport {
    int n_styles = 0;
    double mean_pixel_std = 0;    // per-pixel std across style samples, averaged
    double mean_structure_dice = 0;  // dice(segment(translation), source mask), fraction
    std::vector<double> slice_pixel_std, slice_structure_dice;
};

/// Translates each source slice with n_styles prior samples (zero styles when
/// `deterministic`) and measures spread and structure preservation.
DiversityReport diversity_report(const Model& model, const std::vector<PhantomSlice>& source_slices, int n_styles,
                                 std::uint64_t seed, bool deterministic);

enum class SweepAxis { RealGivenSynth, SynthGivenReal, RealWithBatchRatio };
std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepOptions {
    std::vector<double> grid{10, 25, 50, 75, 100};  // percent
    EvalOptions eval{.seeds = {0, 1, 2}};
};

struct SweepPoint {
    double percent = 0;
    std::uint64_t seed = 0;
    double ap = 0;  // percent, mean over evaluated folds
};

struct SweepTable {
    SweepAxis axis = SweepAxis::SynthGivenReal;
    std::vector<SweepPoint> points;

    std::vector<double> percents() const;
    MeanStd summary(double percent) const;
    std::string csv() const;  // one row per run, then mean and std rows per percent
};

/// The base config with the swept quantity applied.
TrainConfig sweep_config(const TrainConfig& base, SweepAxis axis, double percent);

SweepTable ratio_sweep(const DatasetManifest& manifest, const TrainConfig& base, SweepAxis axis,
                       const SweepOptions& options = {});

}  // namespace uada

#endif  // UADA_EVALUATION_HPP
