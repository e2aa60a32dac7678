#ifndef UADA_PHANTOM_DATA_HPP
#define UADA_PHANTOM_DATA_HPP

// Synthetic two-modality phantom dataset.
//
// A phantom slice is rendered from an AnatomyParams record (smooth background,
// one organ ellipse, 0-3 lesion ellipses). The source modality is a fixed
// function of the anatomy; the target modality additionally depends on a style
// seed (per-channel gains, bias field, texture, lesion contrast), so a single
// anatomy maps to a whole distribution of target images.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace uada {

enum class Domain : std::uint8_t { Source = 0, Target = 1 };

inline constexpr Domain other(Domain d) noexcept {
    return d == Domain::Source ? Domain::Target : Domain::Source;
}
std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct Ellipse {
    double cx = 0.5, cy = 0.5;  // fraction of grid
    double ax = 0.1, ay = 0.1;  // semi-axes, fraction of grid
    double rotation = 0.0;      // radians

    // (u, v) in grid fractions.
    bool contains(double u, double v) const noexcept;
    double area() const noexcept;  // in squared grid fractions
    bool operator==(const Ellipse&) const = default;
};

struct AnatomyParams {
    std::uint64_t seed = 0;
    int grid_size = 64;
    // Coefficients of cos(p*pi*u)*cos(q*pi*v), p,q in {0,1,2}, row-major in p.
    std::array<double, 9> background{};
    Ellipse organ;
    std::vector<Ellipse> lesions;

    bool operator==(const AnatomyParams&) const = default;
};

struct PhantomSlice {
    torch::Tensor image;  // float32 [C, H, W], per-channel zero mean / unit variance
    torch::Tensor mask;   // uint8 [H, W]
    Domain domain = Domain::Source;
    std::string patient_id;
    bool labeled = true;
};

inline constexpr int kMinGridSize = 32;

AnatomyParams generate_anatomy(std::uint64_t seed, int grid_size);

// Anatomy intensity in [0, 1] without lesion contrast, float64 [H, W].
torch::Tensor anatomy_intensity(const AnatomyParams& anatomy);
// Pixel-center rasterization of the lesion ellipses, uint8 [H, W].
torch::Tensor lesion_mask(const AnatomyParams& anatomy);

PhantomSlice render_source(const AnatomyParams& anatomy, int channels = 3);
PhantomSlice render_target(const AnatomyParams& anatomy, std::uint64_t style_seed,
                           int channels = 5);

struct DatasetConfig {
    int n_source = 40;           // source patients
    int n_target = 20;           // target patients
    double labeled_fraction = 0.5;
    int slices_per_patient = 4;
    int grid_size = 64;
    int source_channels = 3;
    int target_channels = 5;
    std::uint64_t seed = 0;
};

inline constexpr int kNumFolds = 5;
inline constexpr const char* kDatasetFormat = "uada-dataset/1";

struct SliceRecord {
    std::string patient_id;
    Domain domain = Domain::Source;
    bool labeled = true;
    int slice_index = 0;
    std::string path;  // relative to the dataset root
    std::string sha256;
};

struct DatasetManifest {
    std::filesystem::path root;  // not serialized
    DatasetConfig config;
    int n_source = 0;
    int n_target = 0;
    int n_target_labeled = 0;
    std::map<int, std::vector<std::string>> folds;
    std::vector<SliceRecord> records;

    // Fold of a target patient, or nullopt for source patients.
    std::optional<int> fold_of(const std::string& patient_id) const;
};

DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir);
DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);
void write_manifest(const DatasetManifest& manifest);

struct SliceSelector {
    std::optional<Domain> domain;
    std::optional<std::vector<int>> folds;  // target folds to keep; source never matches
    std::optional<bool> labeled;
};

std::vector<PhantomSlice> load_slices(const DatasetManifest& manifest,
                                      const SliceSelector& selector = {});

// Single-file codec for the slice format (64-byte header, f32 image, u8 mask).
std::vector<std::uint8_t> encode_slice(const PhantomSlice& slice);
PhantomSlice decode_slice(const std::vector<std::uint8_t>& bytes, const std::string& origin);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace uada

#endif  // UADA_PHANTOM_DATA_HPP
