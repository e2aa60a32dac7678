#include "uada/phantom_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <unordered_map>

#include <openssl/evp.h>

#include "json.hpp"
#include "uada/config.hpp"
#include "uada/errors.hpp"
#include "uada/seeding.hpp"

static_assert(std::endian::native == std::endian::little,
              "slice and checkpoint codecs assume a little-endian host");

namespace uada {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSourceLesionOffset = 0.3;
constexpr double kTargetLesionOffset = 0.4;
constexpr double kTextureAmplitude = 0.12;
constexpr int kTextureWaves = 8;
constexpr std::uint32_t kSliceVersion = 1;
constexpr std::size_t kHeaderBytes = 64;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Ellipse-local normalized radius squared: <= 1 inside.
double radius2(const Ellipse& e, double u, double v) {
    const double dx = u - e.cx, dy = v - e.cy;
    const double c = std::cos(e.rotation), s = std::sin(e.rotation);
    const double x = dx * c + dy * s;
    const double y = -dx * s + dy * c;
    return (x / e.ax) * (x / e.ax) + (y / e.ay) * (y / e.ay);
}

bool inside_with_margin(const Ellipse& outer, const Ellipse& inner, double margin2) {
    constexpr int kBoundaryPoints = 64;
    const double c = std::cos(inner.rotation), s = std::sin(inner.rotation);
    for (int i = 0; i < kBoundaryPoints; ++i) {
        const double t = 2.0 * kPi * i / kBoundaryPoints;
        const double x = inner.ax * std::cos(t), y = inner.ay * std::sin(t);
        const double u = inner.cx + x * c - y * s;
        const double v = inner.cy + x * s + y * c;
        if (radius2(outer, u, v) > margin2) return false;
    }
    return true;
}

// Channel-wise standardization in double precision, returned as float32.
torch::Tensor standardize(const torch::Tensor& channels) {
    auto out = channels.clone();
    for (int64_t k = 0; k < out.size(0); ++k) {
        auto ch = out[k];
        const double mean = ch.mean().item<double>();
        double stdev = (ch - mean).pow(2).mean().sqrt().item<double>();
        if (stdev < 1e-12) stdev = 1.0;
        ch.sub_(mean).div_(stdev);
    }
    return out.to(torch::kFloat32);
}

torch::Tensor cosine_field(int n, const std::vector<std::array<double, 3>>& terms) {
    // terms: (p, q, coefficient) for cos(p*pi*u) * cos(q*pi*v)
    auto field = torch::zeros({n, n}, torch::kFloat64);
    auto acc = field.accessor<double, 2>();
    for (int i = 0; i < n; ++i) {
        const double v = (i + 0.5) / n;
        for (int j = 0; j < n; ++j) {
            const double u = (j + 0.5) / n;
            double s = 0.0;
            for (const auto& [p, q, coef] : terms) s += coef * std::cos(p * kPi * u) * std::cos(q * kPi * v);
            acc[i][j] = s;
        }
    }
    return field;
}

void write_u32(std::uint8_t* p, std::uint32_t v) { std::memcpy(p, &v, sizeof v); }
std::uint32_t read_u32(const std::uint8_t* p) {
    std::uint32_t v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
    if (s == "source" || s == "SOURCE" || s == "S") return Domain::Source;
    if (s == "target" || s == "TARGET" || s == "T") return Domain::Target;
    throw InvalidArgument("unknown domain '" + s + "'");
}

bool Ellipse::contains(double u, double v) const noexcept { return radius2(*this, u, v) <= 1.0; }
double Ellipse::area() const noexcept { return kPi * ax * ay; }

AnatomyParams generate_anatomy(std::uint64_t seed, int grid_size) {
    if (grid_size < kMinGridSize)
        throw InvalidArgument("grid_size must be >= " + std::to_string(kMinGridSize) + ", got " +
                              std::to_string(grid_size));
    std::mt19937_64 rng(derive_seed(seed, {0xA7A7}));

    AnatomyParams a;
    a.seed = seed;
    a.grid_size = grid_size;
    a.background[0] = 0.25;
    for (std::size_t i = 1; i < a.background.size(); ++i) a.background[i] = uniform(rng, -0.025, 0.025);

    a.organ.cx = uniform(rng, 0.42, 0.58);
    a.organ.cy = uniform(rng, 0.42, 0.58);
    a.organ.ax = uniform(rng, 0.26, 0.34);
    a.organ.ay = uniform(rng, 0.22, 0.30);
    a.organ.rotation = uniform(rng, 0.0, kPi);

    const int n_lesions = std::uniform_int_distribution<int>(0, 3)(rng);
    const double c = std::cos(a.organ.rotation), s = std::sin(a.organ.rotation);
    while (static_cast<int>(a.lesions.size()) < n_lesions) {
        Ellipse l;
        l.ax = uniform(rng, 0.05, 0.10);
        l.ay = uniform(rng, 0.05, 0.10);
        l.rotation = uniform(rng, 0.0, kPi);
        const double rho = 0.65 * std::sqrt(uniform(rng, 0.0, 1.0));
        const double t = uniform(rng, 0.0, 2.0 * kPi);
        const double x = rho * a.organ.ax * std::cos(t), y = rho * a.organ.ay * std::sin(t);
        l.cx = a.organ.cx + x * c - y * s;
        l.cy = a.organ.cy + x * s + y * c;
        if (!inside_with_margin(a.organ, l, 0.9)) continue;
        const bool overlaps = std::any_of(a.lesions.begin(), a.lesions.end(), [&](const Ellipse& o) {
            return std::hypot(o.cx - l.cx, o.cy - l.cy) < std::max(o.ax, o.ay) + std::max(l.ax, l.ay) + 0.02;
        });
        if (!overlaps) a.lesions.push_back(l);
    }
    return a;
}

torch::Tensor anatomy_intensity(const AnatomyParams& anatomy) {
    const int n = anatomy.grid_size;
    std::vector<std::array<double, 3>> terms;
    for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q) terms.push_back({double(p), double(q), anatomy.background[p * 3 + q]});
    auto field = cosine_field(n, terms);
    auto acc = field.accessor<double, 2>();
    for (int i = 0; i < n; ++i) {
        const double v = (i + 0.5) / n;
        for (int j = 0; j < n; ++j) {
            const double u = (j + 0.5) / n;
            double value = acc[i][j];
            if (anatomy.organ.contains(u, v)) value = 0.6 + 0.5 * (value - 0.25);
            acc[i][j] = std::clamp(value, 0.0, 1.0);
        }
    }
    return field;
}

torch::Tensor lesion_mask(const AnatomyParams& anatomy) {
    const int n = anatomy.grid_size;
    auto mask = torch::zeros({n, n}, torch::kUInt8);
    auto acc = mask.accessor<std::uint8_t, 2>();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double u = (j + 0.5) / n, v = (i + 0.5) / n;
            for (const auto& l : anatomy.lesions)
                if (l.contains(u, v)) acc[i][j] = 1;
        }
    return mask;
}

PhantomSlice render_source(const AnatomyParams& anatomy, int channels) {
    if (channels < 1) throw InvalidArgument("source channel count must be positive");
    static constexpr std::array<double, 6> kExponents{1.0, 2.0, 0.5, 1.5, 0.75, 3.0};
    const auto base = anatomy_intensity(anatomy);
    auto mask = lesion_mask(anatomy);
    const auto lesion = mask.to(torch::kFloat64) * kSourceLesionOffset;

    auto raw = torch::empty({channels, anatomy.grid_size, anatomy.grid_size}, torch::kFloat64);
    for (int k = 0; k < channels; ++k) raw[k] = base.pow(kExponents[k % kExponents.size()]) + lesion;

    return PhantomSlice{standardize(raw), mask, Domain::Source, {}, true};
}

PhantomSlice render_target(const AnatomyParams& anatomy, std::uint64_t style_seed, int channels) {
    if (channels < 1) throw InvalidArgument("target channel count must be positive");
    const int n = anatomy.grid_size;
    std::mt19937_64 rng(derive_seed(style_seed, {0x57E1E}));

    const auto base = anatomy_intensity(anatomy);
    auto mask = lesion_mask(anatomy);

    const auto bias = cosine_field(n, {{1, 0, uniform(rng, -0.15, 0.15)},
                                       {0, 1, uniform(rng, -0.15, 0.15)},
                                       {1, 1, uniform(rng, -0.15, 0.15)}});
    const double lesion_gain = uniform(rng, 0.5, 1.5);
    const double texture_gain = uniform(rng, 0.5, 1.5);
    const auto lesion = mask.to(torch::kFloat64) * (kTargetLesionOffset * lesion_gain);

    const auto coords = (torch::arange(n, torch::kFloat64) + 0.5) / n;
    const auto vv = coords.view({n, 1}).expand({n, n});
    const auto uu = coords.view({1, n}).expand({n, n});

    auto raw = torch::empty({channels, n, n}, torch::kFloat64);
    for (int k = 0; k < channels; ++k) {
        const double decay = 0.6 * (k + 1);
        const double gain = uniform(rng, 0.6, 1.4);
        auto texture = torch::zeros({n, n}, torch::kFloat64);
        const double amp = kTextureAmplitude * texture_gain * std::sqrt(2.0 / kTextureWaves);
        for (int w = 0; w < kTextureWaves; ++w) {
            const double freq = uniform(rng, 3.0, 8.0);
            const double angle = uniform(rng, 0.0, 2.0 * kPi);
            const double phase = uniform(rng, 0.0, 2.0 * kPi);
            texture += amp * torch::cos(2.0 * kPi * freq * (uu * std::cos(angle) + vv * std::sin(angle)) + phase);
        }
        raw[k] = gain * torch::exp(-decay * (1.0 - base)) + bias + texture + lesion;
    }
    return PhantomSlice{standardize(raw), mask, Domain::Target, {}, true};
}

std::optional<int> DatasetManifest::fold_of(const std::string& patient_id) const {
    for (const auto& [fold, patients] : folds)
        if (std::find(patients.begin(), patients.end(), patient_id) != patients.end()) return fold;
    return std::nullopt;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("SHA-256 computation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::vector<std::uint8_t> encode_slice(const PhantomSlice& slice) {
    const auto image = slice.image.to(torch::kFloat32).contiguous();
    const auto mask = slice.mask.to(torch::kUInt8).contiguous();
    if (image.dim() != 3 || mask.dim() != 2 || image.size(1) != mask.size(0) || image.size(2) != mask.size(1))
        throw InvalidArgument("slice image must be [C,H,W] and mask [H,W] with matching H, W");
    const auto c = static_cast<std::uint32_t>(image.size(0));
    const auto h = static_cast<std::uint32_t>(image.size(1));
    const auto w = static_cast<std::uint32_t>(image.size(2));
    const std::size_t image_bytes = std::size_t(c) * h * w * sizeof(float);
    const std::size_t mask_bytes = std::size_t(h) * w;

    std::vector<std::uint8_t> out(kHeaderBytes + image_bytes + mask_bytes, 0);
    std::memcpy(out.data(), "UADA", 4);
    write_u32(out.data() + 4, kSliceVersion);
    write_u32(out.data() + 8, c);
    write_u32(out.data() + 12, h);
    write_u32(out.data() + 16, w);
    out[20] = static_cast<std::uint8_t>(slice.domain);
    out[21] = slice.labeled ? 1 : 0;
    std::memcpy(out.data() + kHeaderBytes, image.data_ptr<float>(), image_bytes);
    std::memcpy(out.data() + kHeaderBytes + image_bytes, mask.data_ptr<std::uint8_t>(), mask_bytes);
    return out;
}

PhantomSlice decode_slice(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), "UADA", 4) != 0)
        throw CorruptData("not a slice file (bad magic): " + origin);
    if (read_u32(bytes.data() + 4) != kSliceVersion) throw CorruptData("unsupported slice version: " + origin);
    const auto c = read_u32(bytes.data() + 8), h = read_u32(bytes.data() + 12), w = read_u32(bytes.data() + 16);
    const std::size_t image_bytes = std::size_t(c) * h * w * sizeof(float);
    const std::size_t mask_bytes = std::size_t(h) * w;
    if (bytes.size() != kHeaderBytes + image_bytes + mask_bytes || bytes[20] > 1)
        throw CorruptData("slice file size/header mismatch: " + origin);

    PhantomSlice s;
    s.image = torch::empty({c, h, w}, torch::kFloat32);
    s.mask = torch::empty({h, w}, torch::kUInt8);
    std::memcpy(s.image.data_ptr<float>(), bytes.data() + kHeaderBytes, image_bytes);
    std::memcpy(s.mask.data_ptr<std::uint8_t>(), bytes.data() + kHeaderBytes + image_bytes, mask_bytes);
    s.domain = static_cast<Domain>(bytes[20]);
    s.labeled = bytes[21] != 0;
    return s;
}

void write_manifest(const DatasetManifest& m) {
    json j;
    j["format"] = kDatasetFormat;
    j["config"] = to_json(m.config);
    j["n_source"] = m.n_source;
    j["n_target"] = m.n_target;
    j["n_target_labeled"] = m.n_target_labeled;
    json folds = json::object();
    for (const auto& [f, patients] : m.folds) folds[std::to_string(f)] = patients;
    j["folds"] = folds;
    json records = json::array();
    for (const auto& r : m.records)
        records.push_back({{"patient_id", r.patient_id},
                           {"domain", to_string(r.domain)},
                           {"labeled", r.labeled},
                           {"slice_index", r.slice_index},
                           {"path", r.path},
                           {"sha256", r.sha256}});
    j["records"] = records;
    const std::string text = j.dump(2) + "\n";
    write_file(m.root / "manifest.json", text.data(), text.size());
}

DatasetManifest build_dataset(const DatasetConfig& config, const fs::path& out_dir) {
    if (!(config.labeled_fraction > 0.0 && config.labeled_fraction <= 1.0))
        throw InvalidArgument("labeled_fraction must be in (0, 1]");
    if (config.n_source < 0 || config.n_target < kNumFolds)
        throw InvalidArgument("need n_source >= 0 and n_target >= " + std::to_string(kNumFolds));
    if (config.slices_per_patient < 1) throw InvalidArgument("slices_per_patient must be >= 1");
    if (config.grid_size < kMinGridSize)
        throw InvalidArgument("grid_size must be >= " + std::to_string(kMinGridSize));

    std::error_code ec;
    fs::create_directories(out_dir / "slices", ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

    DatasetManifest m;
    m.root = out_dir;
    m.config = config;
    m.n_source = config.n_source;
    m.n_target = config.n_target;
    m.n_target_labeled =
        std::min(config.n_target, static_cast<int>(std::ceil(config.labeled_fraction * config.n_target - 1e-9)));
    for (int f = 0; f < kNumFolds; ++f) m.folds[f] = {};

    auto emit = [&](Domain domain, int patient) {
        char id[16];
        std::snprintf(id, sizeof id, "%c%04d", domain == Domain::Source ? 'S' : 'T', patient);
        const bool labeled = domain == Domain::Source || patient < m.n_target_labeled;
        if (domain == Domain::Target) m.folds[patient % kNumFolds].push_back(id);
        for (int k = 0; k < config.slices_per_patient; ++k) {
            const auto dom = static_cast<std::uint64_t>(domain);
            const auto anatomy =
                generate_anatomy(derive_seed(config.seed, {dom, std::uint64_t(patient), std::uint64_t(k)}),
                                 config.grid_size);
            PhantomSlice s = domain == Domain::Source
                                 ? render_source(anatomy, config.source_channels)
                                 : render_target(anatomy,
                                                 derive_seed(config.seed, {7, std::uint64_t(patient), std::uint64_t(k)}),
                                                 config.target_channels);
            s.patient_id = id;
            s.labeled = labeled;
            const auto bytes = encode_slice(s);
            char name[48];
            std::snprintf(name, sizeof name, "slices/%s_%03d.uada", id, k);
            write_file(out_dir / name, bytes.data(), bytes.size());
            m.records.push_back({id, domain, labeled, k, name, sha256_hex(bytes)});
        }
    };
    for (int p = 0; p < config.n_source; ++p) emit(Domain::Source, p);
    for (int p = 0; p < config.n_target; ++p) emit(Domain::Target, p);

    write_manifest(m);
    return m;
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
    const auto path = dataset_dir / "manifest.json";
    const auto bytes = read_file(path);
    json j;
    try {
        j = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw CorruptData("manifest is not valid JSON: " + path.string() + ": " + e.what());
    }
    if (j.value("format", std::string{}) != kDatasetFormat)
        throw CorruptData("unexpected manifest format in " + path.string());
    try {
        DatasetManifest m;
        m.root = dataset_dir;
        m.config = dataset_config_from_json(j.at("config"));
        m.n_source = j.at("n_source").get<int>();
        m.n_target = j.at("n_target").get<int>();
        m.n_target_labeled = j.at("n_target_labeled").get<int>();
        for (const auto& [key, patients] : j.at("folds").items())
            m.folds[std::stoi(key)] = patients.get<std::vector<std::string>>();
        for (const auto& r : j.at("records"))
            m.records.push_back({r.at("patient_id").get<std::string>(),
                                 domain_from_string(r.at("domain").get<std::string>()),
                                 r.at("labeled").get<bool>(), r.at("slice_index").get<int>(),
                                 r.at("path").get<std::string>(), r.at("sha256").get<std::string>()});
        return m;
    } catch (const json::exception& e) {
        throw CorruptData("malformed manifest " + path.string() + ": " + e.what());
    }
}

std::vector<PhantomSlice> load_slices(const DatasetManifest& manifest, const SliceSelector& selector) {
    std::unordered_map<std::string, int> fold_index;
    for (const auto& [f, patients] : manifest.folds)
        for (const auto& p : patients) fold_index[p] = f;

    std::vector<PhantomSlice> out;
    for (const auto& r : manifest.records) {
        if (selector.domain && r.domain != *selector.domain) continue;
        if (selector.labeled && r.labeled != *selector.labeled) continue;
        if (selector.folds) {
            auto it = fold_index.find(r.patient_id);
            if (it == fold_index.end()) continue;
            if (std::find(selector.folds->begin(), selector.folds->end(), it->second) == selector.folds->end())
                continue;
        }
        const auto path = manifest.root / r.path;
        if (!fs::exists(path)) throw IoError("missing slice file: " + path.string());
        const auto bytes = read_file(path);
        if (sha256_hex(bytes) != r.sha256) throw CorruptData("checksum mismatch: " + path.string());
        auto s = decode_slice(bytes, path.string());
        s.patient_id = r.patient_id;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace uada
