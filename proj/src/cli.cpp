#include "uada/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <unistd.h>

#include <ATen/CPUGeneratorImpl.h>

#include "CLI11.hpp"
#include "uada/checkpoint.hpp"
#include "uada/config.hpp"
#include "uada/errors.hpp"
#include "uada/evaluation.hpp"
#include "uada/plot.hpp"
#include "uada/seeding.hpp"
#include "uada/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace uada {

namespace {

constexpr const char* kCheckpointFile = "checkpoint.uadackpt";
constexpr std::uint64_t kTranslateStream = 0x7A45;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    int threads = 1;
};

struct GenDataArgs {
    std::string config, out;
    std::uint64_t seed = 0;
    bool force = false;
};

struct TrainArgs {
    std::string config, data, out, mode, folds;
    std::uint64_t seed = 0;
    int iterations = -1;
    bool force = false;
};

struct TranslateArgs {
    std::string ckpt, data, out;
    int count = 4, n_styles = 4;
    std::uint64_t seed = 0;
    bool force = false;
};

struct EvalArgs {
    std::string ckpt, data, out, methods;
    int folds = 0, seeds = 1, jobs = 1;
    std::uint64_t seed = 0;
    bool force = false, direct = false;
};

struct SweepArgs {
    std::string config, data, out, axis = "SYNTH_GIVEN_REAL", grid = "10,25,50,75,100";
    int folds = 0, seeds = 3, jobs = 1;
    std::uint64_t seed = 0;
    bool force = false;
};

struct PlotArgs {
    std::string input, out, title;
};

std::vector<std::string> split(const std::string& s, char sep = ',') {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);)
        if (!item.empty()) parts.push_back(item);
    return parts;
}

fs::path data_root(const std::string& given) {
    if (!given.empty()) return given;
    if (const char* env = std::getenv("UADA_DATA_DIR"); env && *env) return env;
    throw UsageError("no dataset given: pass --data or set UADA_DATA_DIR");
}

json config_file(const std::string& path, std::string* text = nullptr) {
    if (path.empty()) return json::object();
    const auto raw = read_text_file(path);
    if (text) *text = raw;
    return parse_config_text(raw);
}

json section(const json& j, const char* name) {
    if (j.is_object() && j.contains(name)) return j.at(name);
    return j.is_object() && (j.contains("dataset") || j.contains("train")) ? json::object() : j;
}

fs::path checkpoint_path(const std::string& given) {
    fs::path p = given;
    if (fs::is_directory(p)) p /= kCheckpointFile;
    return p;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, int n) {
    if (n < 1) throw UsageError("--seeds must be >= 1");
    std::vector<std::uint64_t> s;
    for (int i = 0; i < n; ++i) s.push_back(base + static_cast<std::uint64_t>(i));
    return s;
}

std::vector<int> eval_folds(const DatasetManifest& m, int k) {
    std::vector<int> folds;
    for (const auto& [f, patients] : m.folds) folds.push_back(f);
    if (k < 0 || k > static_cast<int>(folds.size()))
        throw UsageError("--folds must be between 1 and " + std::to_string(folds.size()));
    if (k > 0) folds.resize(static_cast<std::size_t>(k));
    return folds;
}

int gen_data(const GenDataArgs& a, bool seed_given, std::ostream& out) {
    auto cfg = dataset_config_from_json(section(config_file(a.config), "dataset"));
    if (seed_given) cfg.seed = a.seed;
    RunDirectory dir(a.out, a.force);
    auto manifest = build_dataset(cfg, dir.staging());
    dir.commit();
    out << "wrote " << manifest.records.size() << " slices (" << manifest.n_source << " source, " << manifest.n_target
        << " target patients, " << manifest.n_target_labeled << " labeled) to " << dir.target().string() << '\n';
    return kExitOk;
}

int train_cmd(const TrainArgs& a, bool seed_given, std::ostream& out) {
    std::string echo;
    auto cfg = train_config_from_json(section(config_file(a.config, &echo), "train"));
    if (seed_given) cfg.seed = a.seed;
    if (!a.mode.empty()) cfg.mode = baseline_mode_from_string(a.mode);
    if (a.iterations >= 0) cfg.iterations = a.iterations;
    const auto root = data_root(a.data);
    const auto manifest = read_manifest(root);

    RunDirectory dir(a.out, a.force);
    TrainOptions opts;
    for (const auto& f : split(a.folds)) opts.folds.push_back(std::stoi(f));
    opts.run_dir = dir.staging();
    if (!a.config.empty()) write_text_file(dir.staging() / "config.echo", echo);
    write_text_file(dir.staging() / "config.json", to_json(cfg).dump(2) + "\n");
    write_text_file(dir.staging() / "manifest.ref", fs::absolute(root).string() + "\n");
    const auto result = train(cfg, manifest, opts);
    dir.commit();

    out << to_string(cfg.mode) << ": " << result.history.steps.size() << " steps";
    if (!result.history.steps.empty()) {
        const auto& last = result.history.steps.back().report;
        out << ", final objective " << last.objective.total << ", real dice loss " << last.seg_real;
    }
    out << "\ncheckpoint " << (dir.target() / kCheckpointFile).string() << '\n';
    return kExitOk;
}

int translate_cmd(const TranslateArgs& a, std::ostream& out) {
    if (a.n_styles < 1 || a.count < 1) throw UsageError("--n and --count must be >= 1");
    TrainConfig cfg;
    auto model = model_from_checkpoint(load_checkpoint(checkpoint_path(a.ckpt)), &cfg);
    if (!model.translation) throw InvalidArgument("checkpoint has no translation network");
    const auto manifest = read_manifest(data_root(a.data));
    auto slices = load_slices(manifest, {.domain = Domain::Source});
    if (slices.size() > static_cast<std::size_t>(a.count)) slices.resize(static_cast<std::size_t>(a.count));
    const bool det = cfg.mode == BaselineMode::DetTranslationSeg;

    RunDirectory dir(a.out, a.force);
    torch::NoGradGuard no_grad;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(a.seed, {kTranslateStream}));
    const int d = model.translation->config().style_dim;
    for (std::size_t i = 0; i < slices.size(); ++i) {
        const auto& s = slices[i];
        const auto styles = det ? torch::zeros({a.n_styles, d}) : sample_style(gen, d, a.n_styles);
        const auto content = model.translation->encode_content(s.image.unsqueeze(0), Domain::Source);
        const auto imgs = model.translation->decode(content.expand({a.n_styles, -1, -1, -1}), styles, Domain::Target);
        std::vector<std::vector<torch::Tensor>> rows(1);
        for (int64_t c = 0; c < s.image.size(0); ++c) rows[0].push_back(s.image[c]);
        rows[0].push_back(s.mask.to(torch::kFloat32));
        for (int k = 0; k < a.n_styles; ++k) {
            rows.emplace_back();
            for (int64_t c = 0; c < imgs.size(1); ++c) rows.back().push_back(imgs[k][c]);
        }
        char name[64];
        std::snprintf(name, sizeof name, "translation_%03zu_%s.pgm", i, s.patient_id.c_str());
        write_pgm(dir.staging() / name, montage(rows));
    }
    json report = {{"checkpoint", checkpoint_path(a.ckpt).string()}, {"mode", to_string(cfg.mode)},
                   {"n_slices", slices.size()}, {"n_styles", a.n_styles}, {"seed", a.seed}};
    if (a.n_styles >= 2) {
        const auto div = diversity_report(model, slices, a.n_styles, a.seed, det);
        report["mean_pixel_std"] = div.mean_pixel_std;
        report["mean_structure_dice"] = div.mean_structure_dice;
        out << "diversity: mean per-pixel std " << div.mean_pixel_std << ", structure dice "
            << div.mean_structure_dice << '\n';
    }
    write_text_file(dir.staging() / "translations.json", report.dump(2) + "\n");
    dir.commit();
    out << "wrote " << slices.size() << " montages to " << dir.target().string() << '\n';
    return kExitOk;
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
    TrainConfig cfg;
    const auto ckpt = load_checkpoint(checkpoint_path(a.ckpt));
    auto model = model_from_checkpoint(ckpt, &cfg);
    const auto manifest = read_manifest(data_root(a.data));
    const auto folds = eval_folds(manifest, a.folds);
    RunDirectory dir(a.out, a.force);

    if (a.direct) {
        std::ostringstream csv;
        csv << "fold,recall,precision,dsc,ap,n_patients,n_ap_excluded\n";
        for (int f : folds) {
            const auto slices =
                load_slices(manifest, {.domain = Domain::Target, .folds = std::vector<int>{f}, .labeled = true});
            if (slices.empty()) throw ConfigError("fold " + std::to_string(f) + " has no labeled evaluation slices");
            const auto s = evaluate_segmenter(model.segmentation, slices);
            csv << f << ',' << s.recall << ',' << s.precision << ',' << s.dsc << ',' << s.ap << ',' << s.n_patients
                << ',' << s.n_ap_excluded << '\n';
        }
        write_text_file(dir.staging() / "direct_metrics.csv", csv.str());
        dir.commit();
        out << csv.str();
        return kExitOk;
    }

    std::vector<MethodSpec> methods;
    const auto names = a.methods.empty() ? std::vector<std::string>{to_string(cfg.mode)} : split(a.methods);
    for (const auto& n : names) {
        MethodSpec m{n, cfg};
        m.config.mode = baseline_mode_from_string(n);
        methods.push_back(std::move(m));
    }
    EvalOptions opts;
    opts.eval_folds = folds;
    opts.seeds = seed_list(a.seed, a.seeds);
    opts.jobs = a.jobs;
    const auto table = cross_validate(manifest, methods, opts);
    write_text_file(dir.staging() / "metrics.csv", table.csv());
    write_text_file(dir.staging() / "metrics.txt", table.text());
    write_text_file(dir.staging() / "config.json", to_json(cfg).dump(2) + "\n");
    dir.commit();
    out << table.text();
    return kExitOk;
}

int sweep_cmd(const SweepArgs& a, bool seed_given, std::ostream& out) {
    auto cfg = train_config_from_json(section(config_file(a.config), "train"));
    const auto manifest = read_manifest(data_root(a.data));
    SweepOptions opts;
    opts.grid.clear();
    for (const auto& g : split(a.grid)) opts.grid.push_back(std::stod(g));
    if (opts.grid.empty()) throw UsageError("--grid is empty");
    opts.eval.eval_folds = eval_folds(manifest, a.folds);
    opts.eval.seeds = seed_list(seed_given ? a.seed : cfg.seed, a.seeds);
    opts.eval.jobs = a.jobs;
    const auto axis = sweep_axis_from_string(a.axis);

    RunDirectory dir(a.out, a.force);
    const auto table = ratio_sweep(manifest, cfg, axis, opts);
    write_text_file(dir.staging() / "sweep.csv", table.csv());
    Series s{to_string(axis)};
    for (double p : table.percents()) {
        const auto ms = table.summary(p);
        s.x.push_back(p);
        s.y.push_back(ms.mean);
        s.err.push_back(ms.std);
    }
    write_text_file(dir.staging() / "sweep.svg", line_plot_svg({s}, "AP vs data budget", "percent", "AP (%)"));
    write_text_file(dir.staging() / "config.json", to_json(cfg).dump(2) + "\n");
    dir.commit();
    out << table.csv();
    return kExitOk;
}

int plot_cmd(const PlotArgs& a, std::ostream& out) {
    std::istringstream in(read_text_file(a.input));
    std::string line, header;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header.empty()) {
            header = line;
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        rows.push_back(std::move(cells));
    }
    const auto cols = [&] {
        std::vector<std::string> c;
        std::stringstream ss(header);
        for (std::string x; std::getline(ss, x, ',');) c.push_back(x);
        return c;
    }();
    auto col = [&](const std::string& name) {
        const auto it = std::find(cols.begin(), cols.end(), name);
        if (it == cols.end()) throw InvalidArgument("plot: column '" + name + "' missing in " + a.input);
        return static_cast<std::size_t>(it - cols.begin());
    };

    std::vector<Series> series;
    std::string title = a.title, xl, yl;
    if (header.rfind("row,percent", 0) == 0) {
        Series mean{"mean AP"};
        std::map<double, double> stds;
        for (const auto& r : rows)
            if (r[0] == "std") stds[std::stod(r[1])] = std::stod(r[3]);
        for (const auto& r : rows)
            if (r[0] == "mean") {
                mean.x.push_back(std::stod(r[1]));
                mean.y.push_back(std::stod(r[3]));
                mean.err.push_back(stds[std::stod(r[1])]);
            }
        series.push_back(mean);
        xl = "percent", yl = "AP (%)";
        if (title.empty()) title = "AP vs data budget";
    } else if (header.rfind("step,", 0) == 0) {
        for (const char* name : {"total", "seg_real", "disc"}) {
            Series s{name};
            const auto c = col(name);
            for (const auto& r : rows) {
                s.x.push_back(std::stod(r[0]));
                s.y.push_back(std::stod(r[c]));
            }
            series.push_back(s);
        }
        xl = "iteration", yl = "loss";
        if (title.empty()) title = "Training losses";
    } else if (header.rfind("method,fold", 0) == 0) {
        std::map<std::string, Series> by_method;
        const auto c = col("ap");
        for (const auto& r : rows) {
            if (r[1] == "mean" || r[1] == "std") continue;
            auto& s = by_method[r[0]];
            s.label = r[0];
            s.x.push_back(std::stod(r[1]));
            s.y.push_back(std::stod(r[c]));
        }
        for (auto& [k, s] : by_method) series.push_back(std::move(s));
        xl = "fold", yl = "AP (%)";
        if (title.empty()) title = "AP per fold";
    } else {
        throw InvalidArgument("plot: unrecognized CSV layout in " + a.input);
    }
    write_text_file(a.out, line_plot_svg(series, title, xl, yl));
    out << "wrote " << a.out << '\n';
    return kExitOk;
}

json defaults() {
    return {{"dataset", to_json(DatasetConfig{})},
            {"train", to_json(TrainConfig{})},
            {"cli",
             {{"threads", 1},
              {"translate", {{"count", 4}, {"n", 4}, {"seed", 0}}},
              {"eval", {{"folds", "all"}, {"seeds", 1}, {"seed", 0}, {"jobs", 1}}},
              {"sweep-ratio",
               {{"axis", "SYNTH_GIVEN_REAL"}, {"grid", "10,25,50,75,100"}, {"folds", "all"}, {"seeds", 3}, {"jobs", 1}}},
              {"data", "$UADA_DATA_DIR"}}}};
}

}  // namespace

RunDirectory::RunDirectory(fs::path target, bool force) : target_(std::move(target)) {
    if (target_.empty()) throw UsageError("output directory is empty");
    if (fs::exists(target_) && !force)
        throw IoError(target_.string() + " already exists (use --force to replace it)");
    const auto name = target_.filename().empty() ? target_.parent_path().filename() : target_.filename();
    const auto parent = fs::absolute(target_).parent_path();
    std::error_code ec;
    fs::create_directories(parent, ec);
    staging_ = parent / ("." + name.string() + ".staging-" + std::to_string(::getpid()));
    fs::remove_all(staging_, ec);
    if (!fs::create_directory(staging_, ec) || ec)
        throw IoError("cannot create " + staging_.string() + ": " + ec.message());
}

RunDirectory::~RunDirectory() {
    if (committed_) return;
    std::error_code ec;
    fs::remove_all(staging_, ec);
}

void RunDirectory::commit() {
    std::error_code ec;
    if (fs::exists(target_)) {
        fs::remove_all(target_, ec);
        if (ec) throw IoError("cannot replace " + target_.string() + ": " + ec.message());
    }
    fs::rename(staging_, target_, ec);
    if (ec) throw IoError("cannot move run into " + target_.string() + ": " + ec.message());
    committed_ = true;
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Domain adaptation with stochastic translation and residual adapters on phantom data", "uada"};
    app.require_subcommand(1);
    app.fallthrough();
    app.failure_message(CLI::FailureMessage::help);
    Common common;
    app.add_option("--threads", common.threads, "Intra-op threads (1 gives the determinism contract)")
        ->default_val(1)
        ->check(CLI::PositiveNumber);

    GenDataArgs gd;
    auto* gd_cmd = app.add_subcommand("gen-data", "Generate a phantom dataset and its manifest");
    gd_cmd->add_option("--config", gd.config, "Dataset config file (JSON or key = value)");
    gd_cmd->add_option("--out", gd.out, "Dataset directory")->required();
    auto* gd_seed = gd_cmd->add_option("--seed", gd.seed, "Master seed (overrides the config)");
    gd_cmd->add_flag("--force", gd.force, "Replace an existing directory");

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "Train one regime and write a run directory");
    tr_cmd->add_option("--config", tr.config, "Training config file (JSON or key = value)");
    tr_cmd->add_option("--data", tr.data, "Dataset directory (default $UADA_DATA_DIR)");
    tr_cmd->add_option("--out", tr.out, "Run directory")->required();
    auto* tr_seed = tr_cmd->add_option("--seed", tr.seed, "Seed (overrides the config)");
    tr_cmd->add_option("--mode", tr.mode, "Regime (overrides the config)")
        ->check(CLI::IsMember({"TARGET_ONLY", "FINETUNE", "RA_ONLY", "DET_TRANSLATION_SEG", "STOCH_TRANSLATION_SEG",
                               "STOCH_TRANSLATION_SEG_RA"}));
    tr_cmd->add_option("--iterations", tr.iterations, "Iterations (overrides the config)")->check(CLI::NonNegativeNumber);
    tr_cmd->add_option("--folds", tr.folds, "Comma-separated training folds (default all)");
    tr_cmd->add_flag("--force", tr.force, "Replace an existing run directory");

    TranslateArgs tl;
    auto* tl_cmd = app.add_subcommand("translate", "Write source slices next to sampled target-style translations");
    tl_cmd->add_option("--ckpt", tl.ckpt, "Checkpoint file or run directory")->required();
    tl_cmd->add_option("--data", tl.data, "Dataset directory (default $UADA_DATA_DIR)");
    tl_cmd->add_option("--out", tl.out, "Output directory")->required();
    tl_cmd->add_option("--count", tl.count, "Number of source slices")->default_val(4);
    tl_cmd->add_option("--n", tl.n_styles, "Style samples per slice")->default_val(4);
    tl_cmd->add_option("--seed", tl.seed, "Style sampling seed")->default_val(0);
    tl_cmd->add_flag("--force", tl.force, "Replace an existing output directory");

    EvalArgs ev;
    auto* ev_cmd = app.add_subcommand("eval", "Cross-validate the checkpoint's regime and write metric tables");
    ev_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file or run directory (its config is reused)")->required();
    ev_cmd->add_option("--data", ev.data, "Dataset directory (default $UADA_DATA_DIR)");
    ev_cmd->add_option("--out", ev.out, "Output directory")->required();
    ev_cmd->add_option("--folds", ev.folds, "Evaluate the first K folds (0 = all)")->default_val(0);
    ev_cmd->add_option("--seeds", ev.seeds, "Number of seeds, starting at --seed")->default_val(1);
    ev_cmd->add_option("--seed", ev.seed, "First seed")->default_val(0);
    ev_cmd->add_option("--methods", ev.methods, "Comma-separated regimes (default: the checkpoint's)");
    ev_cmd->add_option("--jobs", ev.jobs, "Concurrent fold trainings")->default_val(1)->check(CLI::PositiveNumber);
    ev_cmd->add_flag("--direct", ev.direct, "Score the checkpoint weights as they are, without retraining");
    ev_cmd->add_flag("--force", ev.force, "Replace an existing output directory");

    SweepArgs sw;
    auto* sw_cmd = app.add_subcommand("sweep-ratio", "AP as a function of the real or synthesized data budget");
    sw_cmd->add_option("--config", sw.config, "Training config file (JSON or key = value)");
    sw_cmd->add_option("--data", sw.data, "Dataset directory (default $UADA_DATA_DIR)");
    sw_cmd->add_option("--out", sw.out, "Output directory")->required();
    sw_cmd->add_option("--axis", sw.axis, "Swept quantity")
        ->default_val("SYNTH_GIVEN_REAL")
        ->check(CLI::IsMember({"REAL_GIVEN_SYNTH", "SYNTH_GIVEN_REAL", "REAL_WITH_BATCH_RATIO"}));
    sw_cmd->add_option("--grid", sw.grid, "Comma-separated percentages")->default_val("10,25,50,75,100");
    sw_cmd->add_option("--folds", sw.folds, "Evaluate the first K folds (0 = all)")->default_val(0);
    sw_cmd->add_option("--seeds", sw.seeds, "Number of seeds")->default_val(3);
    auto* sw_seed = sw_cmd->add_option("--seed", sw.seed, "First seed (default: the config's)");
    sw_cmd->add_option("--jobs", sw.jobs, "Concurrent trainings")->default_val(1)->check(CLI::PositiveNumber);
    sw_cmd->add_flag("--force", sw.force, "Replace an existing output directory");

    PlotArgs pl;
    auto* pl_cmd = app.add_subcommand("plot", "Render a sweep, training-log or metrics CSV as SVG");
    pl_cmd->add_option("--input", pl.input, "CSV written by sweep-ratio, train or eval")->required();
    pl_cmd->add_option("--out", pl.out, "SVG file")->required();
    pl_cmd->add_option("--title", pl.title, "Figure title");

    bool dump = false;
    auto* cf_cmd = app.add_subcommand("config", "Show configuration defaults");
    cf_cmd->add_flag("--dump-defaults", dump, "Print every default as JSON");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        torch::set_num_threads(common.threads);
        if (gd_cmd->parsed()) return gen_data(gd, gd_seed->count() > 0, out);
        if (tr_cmd->parsed()) return train_cmd(tr, tr_seed->count() > 0, out);
        if (tl_cmd->parsed()) return translate_cmd(tl, out);
        if (ev_cmd->parsed()) return eval_cmd(ev, out);
        if (sw_cmd->parsed()) return sweep_cmd(sw, sw_seed->count() > 0, out);
        if (pl_cmd->parsed()) return plot_cmd(pl, out);
        if (cf_cmd->parsed()) {
            if (!dump) {
                err << cf_cmd->help();
                return kExitUsage;
            }
            out << defaults().dump(2) << '\n';
            return kExitOk;
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

int run_command(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_command(args, std::cout, std::cerr);
}

}  // namespace uada
