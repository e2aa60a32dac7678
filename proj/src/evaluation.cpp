#include "uada/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <ATen/CPUGeneratorImpl.h>

#include "uada/errors.hpp"
#include "uada/seeding.hpp"

namespace uada {

namespace {

constexpr int64_t kEvalChunk = 32;
constexpr std::uint64_t kFoldStream = 0xF01D;
constexpr std::uint64_t kDiversityStream = 0xD17E;

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width) {
    // Column widths count code points so that "±" lines up.
    std::size_t cps = 0;
    for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
    return s + std::string(width > cps ? width - cps : 0, ' ');
}

double metric_of(const FoldScores& f, Metric m) {
    switch (m) {
        case Metric::Recall: return f.recall;
        case Metric::Precision: return f.precision;
        case Metric::Dsc: return f.dsc;
        case Metric::Ap: return f.ap;
    }
    return 0.0;
}

struct Job {
    TrainConfig config;
    int fold = 0;
};

std::vector<int> all_folds(const DatasetManifest& m) {
    std::vector<int> f;
    for (const auto& [fold, patients] : m.folds) f.push_back(fold);
    return f;
}

// Runs independent train+evaluate jobs on up to `threads` workers. Results
// do not depend on the worker count.
std::vector<FoldScores> run_jobs(const DatasetManifest& manifest, const std::vector<Job>& jobs,
                                 const std::map<int, std::vector<PhantomSlice>>& eval_slices, int threads,
                                 const std::function<void(const std::string&)>& log) {
    std::vector<FoldScores> out(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr error;
    const auto folds = all_folds(manifest);

    auto worker = [&] {
        for (std::size_t i; (i = next++) < jobs.size();) {
            {
                std::lock_guard lock(mu);
                if (error) return;
            }
            try {
                const auto& job = jobs[i];
                TrainOptions opts;
                for (int f : folds)
                    if (f != job.fold) opts.folds.push_back(f);
                auto result = train(job.config, manifest, opts);
                out[i] = evaluate_segmenter(result.model.segmentation, eval_slices.at(job.fold));
                if (log) {
                    std::lock_guard lock(mu);
                    log(to_string(job.config.mode) + " fold " + std::to_string(job.fold) + " seed " +
                        std::to_string(job.config.seed) + ": AP " + fmt("%.2f", out[i].ap));
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    return out;
}

std::map<int, std::vector<PhantomSlice>> load_eval_slices(const DatasetManifest& manifest,
                                                          const std::vector<int>& folds) {
    std::map<int, std::vector<PhantomSlice>> slices;
    for (int f : folds) {
        if (!manifest.folds.count(f)) throw ConfigError("fold " + std::to_string(f) + " is not in the manifest");
        slices[f] = load_slices(manifest, {.domain = Domain::Target, .folds = std::vector<int>{f}, .labeled = true});
        if (slices[f].empty()) throw ConfigError("fold " + std::to_string(f) + " has no labeled evaluation slices");
    }
    return slices;
}

FoldScores average(const std::vector<FoldScores>& runs) {
    FoldScores avg = runs.front();
    for (Metric m : kMetrics) {
        double s = 0;
        for (const auto& r : runs) s += metric_of(r, m);
        s /= double(runs.size());
        switch (m) {
            case Metric::Recall: avg.recall = s; break;
            case Metric::Precision: avg.precision = s; break;
            case Metric::Dsc: avg.dsc = s; break;
            case Metric::Ap: avg.ap = s; break;
        }
    }
    return avg;
}

}  // namespace

FoldScores evaluate_segmenter(SegNet& seg, const std::vector<PhantomSlice>& slices, AdapterDomain domain) {
    torch::NoGradGuard no_grad;
    std::map<std::string, std::vector<std::size_t>> by_patient;
    for (std::size_t i = 0; i < slices.size(); ++i) by_patient[slices[i].patient_id].push_back(i);

    FoldScores fold;
    double ap_sum = 0;
    int ap_n = 0;
    for (const auto& [patient, idx] : by_patient) {
        std::vector<torch::Tensor> imgs, masks;
        for (auto i : idx) {
            imgs.push_back(slices[i].image);
            masks.push_back(slices[i].mask);
        }
        const auto images = torch::stack(imgs);
        std::vector<torch::Tensor> preds;
        for (int64_t s = 0; s < images.size(0); s += kEvalChunk)
            preds.push_back(seg->segment(images.narrow(0, s, std::min(kEvalChunk, images.size(0) - s)), domain));
        const auto pred = torch::cat(preds);
        const auto mask = torch::stack(masks);

        PatientScores ps;
        ps.patient_id = patient;
        ps.counts = confusion(pred, mask);
        ps.recall = recall(ps.counts);
        ps.precision = precision(ps.counts);
        ps.dsc = dsc_metric(ps.counts);
        ps.ap = average_precision(pred, mask);
        fold.recall += ps.recall;
        fold.precision += ps.precision;
        fold.dsc += ps.dsc;
        if (std::isnan(ps.ap)) {
            ++fold.n_ap_excluded;
        } else {
            ap_sum += ps.ap;
            ++ap_n;
        }
        fold.patients.push_back(std::move(ps));
    }
    fold.n_patients = static_cast<int>(by_patient.size());
    if (fold.n_patients == 0) throw InvalidArgument("evaluate_segmenter: no slices");
    fold.recall *= 100.0 / fold.n_patients;
    fold.precision *= 100.0 / fold.n_patients;
    fold.dsc *= 100.0 / fold.n_patients;
    fold.ap = ap_n > 0 ? 100.0 * ap_sum / ap_n : std::numeric_limits<double>::quiet_NaN();
    return fold;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    if (values.empty()) return r;
    r.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    if (values.size() < 2) return r;
    double ss = 0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / double(values.size() - 1));
    return r;
}

std::string format_mean_std(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f (± %.1f)", mean, std);
    return buf;
}

std::string metric_name(Metric m) {
    switch (m) {
        case Metric::Recall: return "Recall";
        case Metric::Precision: return "Precision";
        case Metric::Dsc: return "DSC";
        case Metric::Ap: return "AP";
    }
    return "";
}

std::vector<double> MethodRow::values(Metric m) const {
    std::vector<double> v;
    for (const auto& f : per_fold) v.push_back(metric_of(f, m));
    return v;
}

const MethodRow& MetricTable::row(const std::string& method) const {
    for (const auto& r : rows)
        if (r.method == method) return r;
    throw InvalidArgument("no row for method '" + method + "'");
}

std::string MetricTable::text() const {
    std::size_t name_w = 6;
    for (const auto& r : rows) name_w = std::max(name_w, r.method.size());
    const std::size_t col_w = 16;
    std::ostringstream os;
    const std::size_t n_folds = rows.empty() ? 0 : rows.front().folds.size();
    os << "# mean (± sample std) over " << n_folds << " folds, " << n_seeds
       << " seed(s); percent; voxel AP pooled per patient; threshold 0.5\n";
    os << pad("Method", name_w + 2);
    for (Metric m : kMetrics) os << pad(metric_name(m), col_w);
    os << '\n';
    for (const auto& r : rows) {
        os << pad(r.method, name_w + 2);
        for (Metric m : kMetrics) {
            const auto s = r.summary(m);
            os << pad(format_mean_std(s.mean, s.std), col_w);
        }
        os << '\n';
    }
    return os.str();
}

std::string MetricTable::csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "method,fold,recall,precision,dsc,ap,n_patients,n_ap_excluded\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.folds.size(); ++i) {
            const auto& f = r.per_fold[i];
            os << r.method << ',' << r.folds[i] << ',' << f.recall << ',' << f.precision << ',' << f.dsc << ','
               << f.ap << ',' << f.n_patients << ',' << f.n_ap_excluded << '\n';
        }
        os << r.method << ",mean";
        for (Metric m : kMetrics) os << ',' << r.summary(m).mean;
        os << ",,\n" << r.method << ",std";
        for (Metric m : kMetrics) os << ',' << r.summary(m).std;
        os << ",,\n";
    }
    return os.str();
}

std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    return derive_seed(seed, {kFoldStream, static_cast<std::uint64_t>(fold)});
}

MetricTable cross_validate(const DatasetManifest& manifest, const std::vector<MethodSpec>& methods,
                           const EvalOptions& options) {
    if (methods.empty()) throw InvalidArgument("cross_validate: no methods");
    if (options.seeds.empty()) throw InvalidArgument("cross_validate: no seeds");
    const auto folds = options.eval_folds.empty() ? all_folds(manifest) : options.eval_folds;
    const auto eval_slices = load_eval_slices(manifest, folds);

    std::vector<Job> jobs;
    for (const auto& method : methods)
        for (auto seed : options.seeds)
            for (int f : folds) {
                Job j{method.config, f};
                j.config.seed = fold_seed(seed, f);
                jobs.push_back(std::move(j));
            }
    const auto scores = run_jobs(manifest, jobs, eval_slices, options.jobs, options.log);

    MetricTable table;
    table.n_seeds = static_cast<int>(options.seeds.size());
    std::size_t k = 0;
    for (const auto& method : methods) {
        MethodRow row;
        row.method = method.name;
        row.folds = folds;
        std::vector<std::vector<FoldScores>> per_fold(folds.size());
        for (std::size_t s = 0; s < options.seeds.size(); ++s)
            for (std::size_t f = 0; f < folds.size(); ++f) per_fold[f].push_back(scores[k++]);
        for (const auto& runs : per_fold) row.per_fold.push_back(average(runs));
        table.rows.push_back(std::move(row));
    }
    return table;
}

DiversityReport diversity_report(const Model& model, const std::vector<PhantomSlice>& source_slices, int n_styles,
                                 std::uint64_t seed, bool deterministic) {
    if (n_styles < 2) throw InvalidArgument("diversity_report: n_styles must be >= 2");
    if (!model.translation || !model.segmentation)
        throw InvalidArgument("diversity_report: needs translation and segmentation networks");
    if (source_slices.empty()) throw InvalidArgument("diversity_report: no source slices");
    torch::NoGradGuard no_grad;
    auto net = model.translation;
    auto seg = model.segmentation;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, {kDiversityStream}));
    const int d = net->config().style_dim;

    DiversityReport r;
    r.n_styles = n_styles;
    for (const auto& s : source_slices) {
        if (s.domain != Domain::Source) throw InvalidArgument("diversity_report: expects source slices");
        const auto content = net->encode_content(s.image.unsqueeze(0), Domain::Source);
        const auto styles = deterministic ? torch::zeros({n_styles, d}) : sample_style(gen, d, n_styles);
        const auto out = net->decode(content.expand({n_styles, -1, -1, -1}), styles, Domain::Target);
        r.slice_pixel_std.push_back(out.std(0, /*unbiased=*/false).mean().item<double>());

        const auto pred = seg->segment(out, AdapterDomain::Synthesized);
        double dice = 0;
        for (int i = 0; i < n_styles; ++i) dice += dsc_metric(confusion(pred[i], s.mask));
        r.slice_structure_dice.push_back(dice / n_styles);
    }
    r.mean_pixel_std = mean_std(r.slice_pixel_std).mean;
    r.mean_structure_dice = mean_std(r.slice_structure_dice).mean;
    return r;
}

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::RealGivenSynth: return "REAL_GIVEN_SYNTH";
        case SweepAxis::SynthGivenReal: return "SYNTH_GIVEN_REAL";
        case SweepAxis::RealWithBatchRatio: return "REAL_WITH_BATCH_RATIO";
    }
    return "";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    for (auto a : {SweepAxis::RealGivenSynth, SweepAxis::SynthGivenReal, SweepAxis::RealWithBatchRatio})
        if (to_string(a) == s) return a;
    throw InvalidArgument("unknown sweep axis '" + s + "'");
}

std::vector<double> SweepTable::percents() const {
    std::vector<double> p;
    for (const auto& pt : points)
        if (std::find(p.begin(), p.end(), pt.percent) == p.end()) p.push_back(pt.percent);
    return p;
}

MeanStd SweepTable::summary(double percent) const {
    std::vector<double> v;
    for (const auto& pt : points)
        if (pt.percent == percent) v.push_back(pt.ap);
    return mean_std(v);
}

std::string SweepTable::csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "# axis " << to_string(axis) << "; AP in percent, mean over evaluated folds; std is the sample std\n";
    os << "row,percent,seed,ap\n";
    for (const auto& pt : points) os << "run," << pt.percent << ',' << pt.seed << ',' << pt.ap << '\n';
    for (double p : percents()) {
        const auto s = summary(p);
        os << "mean," << p << ",," << s.mean << '\n' << "std," << p << ",," << s.std << '\n';
    }
    return os.str();
}

TrainConfig sweep_config(const TrainConfig& base, SweepAxis axis, double percent) {
    if (!(percent > 0.0 && percent <= 100.0)) throw InvalidArgument("sweep percentages must be in (0, 100]");
    TrainConfig c = base;
    switch (axis) {
        case SweepAxis::RealGivenSynth: c.real_fraction = percent / 100.0; break;
        case SweepAxis::SynthGivenReal: c.synth_fraction = percent / 100.0; break;
        case SweepAxis::RealWithBatchRatio:
            c.real_fraction = percent / 100.0;
            c.batch_ratio_from_pools = true;
            break;
    }
    return c;
}

SweepTable ratio_sweep(const DatasetManifest& manifest, const TrainConfig& base, SweepAxis axis,
                       const SweepOptions& options) {
    if (options.grid.empty()) throw InvalidArgument("ratio_sweep: empty grid");
    if (options.eval.seeds.empty()) throw InvalidArgument("ratio_sweep: no seeds");
    const auto folds = options.eval.eval_folds.empty() ? all_folds(manifest) : options.eval.eval_folds;
    const auto eval_slices = load_eval_slices(manifest, folds);

    std::vector<Job> jobs;
    for (double p : options.grid) {
        const auto cfg = sweep_config(base, axis, p);
        for (auto seed : options.eval.seeds)
            for (int f : folds) {
                Job j{cfg, f};
                j.config.seed = fold_seed(seed, f);
                jobs.push_back(std::move(j));
            }
    }
    const auto scores = run_jobs(manifest, jobs, eval_slices, options.eval.jobs, options.eval.log);

    SweepTable table;
    table.axis = axis;
    std::size_t k = 0;
    for (double p : options.grid)
        for (auto seed : options.eval.seeds) {
            double ap = 0;
            for (std::size_t f = 0; f < folds.size(); ++f) ap += scores[k++].ap;
            table.points.push_back({p, seed, ap / double(folds.size())});
        }
    return table;
}

}  // namespace uada
