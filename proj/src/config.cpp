#include "uada/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "uada/errors.hpp"
#include "uada/trainer.hpp"

namespace uada {

using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Reads keys from a JSON object, remembering which were consumed so that
// leftovers can be reported.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const json* object(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown config key '" + where_ + "." + k + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Softplus: return "softplus";
    }
    return "relu";
}

Activation activation_from(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "leaky_relu") return Activation::LeakyRelu;
    if (s == "softplus") return Activation::Softplus;
    throw ConfigError("unknown activation '" + s + "'");
}

json to_json(const TranslationConfig& c) {
    return {{"source_channels", c.source_channels}, {"target_channels", c.target_channels},
            {"dim", c.dim},         {"n_res", c.n_res},
            {"style_dim", c.style_dim}, {"mlp_dim", c.mlp_dim},
            {"disc_dim", c.disc_dim},   {"stem_kernel", c.stem_kernel},
            {"activation", activation_name(c.activation)}};
}

TranslationConfig translation_from(const json& j) {
    TranslationConfig c;
    Reader r(j, "translation");
    r.get("source_channels", c.source_channels);
    r.get("target_channels", c.target_channels);
    r.get("dim", c.dim);
    r.get("n_res", c.n_res);
    r.get("style_dim", c.style_dim);
    r.get("mlp_dim", c.mlp_dim);
    r.get("disc_dim", c.disc_dim);
    r.get("stem_kernel", c.stem_kernel);
    std::string act = activation_name(c.activation);
    r.get("activation", act);
    c.activation = activation_from(act);
    r.finish();
    return c;
}

json to_json(const SegConfig& c) {
    return {{"source_channels", c.source_channels}, {"target_channels", c.target_channels},
            {"width", c.width}, {"activation", activation_name(c.activation)}};
}

SegConfig seg_from(const json& j) {
    SegConfig c;
    Reader r(j, "segmentation");
    r.get("source_channels", c.source_channels);
    r.get("target_channels", c.target_channels);
    r.get("width", c.width);
    std::string act = activation_name(c.activation);
    r.get("activation", act);
    c.activation = activation_from(act);
    r.finish();
    return c;
}

json to_json(const LossWeights& w) {
    return {{"gan", w.gan}, {"recon", w.recon}, {"content", w.content},
            {"style", w.style}, {"cycle", w.cycle}, {"seg_synth", w.seg_synth}};
}

LossWeights weights_from(const json& j) {
    LossWeights w;
    Reader r(j, "weights");
    r.get("gan", w.gan);
    r.get("recon", w.recon);
    r.get("content", w.content);
    r.get("style", w.style);
    r.get("cycle", w.cycle);
    r.get("seg_synth", w.seg_synth);
    r.finish();
    return w;
}

json parse_scalar(const std::string& raw) {
    const std::string v = trim(raw);
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    try {
        auto parsed = json::parse(v);
        if (parsed.is_primitive()) return parsed;
    } catch (const json::exception&) {
    }
    return v;
}

}  // namespace

json parse_config_text(const std::string& text) {
    const std::string body = trim(text);
    if (!body.empty() && body.front() == '{') {
        try {
            return json::parse(body);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
    }
    json out = json::object();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        json* node = &out;
        std::size_t start = 0;
        for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
            node = &(*node)[key.substr(start, dot - start)];
            if (!node->is_object()) *node = json::object();
        }
        (*node)[key.substr(start)] = parse_scalar(line.substr(eq + 1));
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_config_file(const std::filesystem::path& path) { return parse_config_text(read_text_file(path)); }

json section_or_self(const json& j, const char* section) {
    if (j.is_object() && j.contains(section) && j.at(section).is_object()) return j.at(section);
    return j;
}

json to_json(const DatasetConfig& c) {
    return {{"n_source", c.n_source},
            {"n_target", c.n_target},
            {"labeled_fraction", c.labeled_fraction},
            {"slices_per_patient", c.slices_per_patient},
            {"grid_size", c.grid_size},
            {"source_channels", c.source_channels},
            {"target_channels", c.target_channels},
            {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const json& j) {
    DatasetConfig c;
    Reader r(j, "dataset");
    r.get("n_source", c.n_source);
    r.get("n_target", c.n_target);
    r.get("labeled_fraction", c.labeled_fraction);
    r.get("slices_per_patient", c.slices_per_patient);
    r.get("grid_size", c.grid_size);
    r.get("source_channels", c.source_channels);
    r.get("target_channels", c.target_channels);
    r.get("seed", c.seed);
    r.finish();
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"iterations", c.iterations},
            {"pretrain_iterations", c.pretrain_iterations},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"weights", to_json(c.weights)},
            {"synth_to_real", c.synth_to_real},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"checkpoint_every", c.checkpoint_every},
            {"non_saturating_gan", c.non_saturating_gan},
            {"dice_mode", c.dice_mode == DiceMode::BatchGlobal ? "batch_global" : "per_image"},
            {"seg_warmup", c.seg_warmup},
            {"real_fraction", c.real_fraction},
            {"synth_fraction", c.synth_fraction},
            {"batch_ratio_from_pools", c.batch_ratio_from_pools},
            {"translation", to_json(c.translation)},
            {"segmentation", to_json(c.segmentation)}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    Reader r(j, "train");
    r.get("learning_rate", c.learning_rate);
    r.get("batch_size", c.batch_size);
    r.get("iterations", c.iterations);
    r.get("pretrain_iterations", c.pretrain_iterations);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    if (const auto* w = r.object("weights")) c.weights = weights_from(*w);
    r.get("synth_to_real", c.synth_to_real);
    r.get("seed", c.seed);
    std::string mode = to_string(c.mode);
    r.get("mode", mode);
    try {
        c.mode = baseline_mode_from_string(mode);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    r.get("checkpoint_every", c.checkpoint_every);
    r.get("non_saturating_gan", c.non_saturating_gan);
    std::string dice = "batch_global";
    r.get("dice_mode", dice);
    if (dice == "batch_global") c.dice_mode = DiceMode::BatchGlobal;
    else if (dice == "per_image") c.dice_mode = DiceMode::PerImage;
    else throw ConfigError("dice_mode must be batch_global or per_image");
    r.get("seg_warmup", c.seg_warmup);
    r.get("real_fraction", c.real_fraction);
    r.get("synth_fraction", c.synth_fraction);
    r.get("batch_ratio_from_pools", c.batch_ratio_from_pools);
    if (const auto* t = r.object("translation")) c.translation = translation_from(*t);
    if (const auto* s = r.object("segmentation")) c.segmentation = seg_from(*s);
    r.finish();
    return c;
}

}  // namespace uada
