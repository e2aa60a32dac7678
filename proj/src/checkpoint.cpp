#include "uada/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "uada/errors.hpp"

namespace uada {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'U', 'A', 'D', 'A', 'C', 'K', 'P', 'T'};

void append(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true))
        ckpt.tensors.push_back({prefix + p.key(), p.value().detach().to(torch::kFloat32).contiguous().clone()});
    for (const auto& b : module.named_buffers(true))
        ckpt.tensors.push_back({prefix + b.key(), b.value().detach().to(torch::kFloat32).contiguous().clone()});
}

void assign(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto load = [&](const std::string& key, torch::Tensor& dst) {
        const auto* src = ckpt.find(prefix + key);
        if (!src) throw CorruptData("checkpoint is missing tensor '" + prefix + key + "'");
        if (src->sizes() != dst.sizes())
            throw CorruptData("checkpoint tensor '" + prefix + key + "' has the wrong shape");
        dst.copy_(*src);
    };
    for (auto& p : module.named_parameters(true)) load(p.key(), p.value());
    for (auto& b : module.named_buffers(true)) load(b.key(), b.value());
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t.value;
    return nullptr;
}

Checkpoint capture(const TranslationNet* translation, const SegNet* segmentation, json config) {
    Checkpoint ckpt;
    ckpt.config = std::move(config);
    if (translation && *translation) append(ckpt, "translation/", **translation);
    if (segmentation && *segmentation) append(ckpt, "segmentation/", **segmentation);
    return ckpt;
}

void restore(const Checkpoint& ckpt, TranslationNet* translation, SegNet* segmentation) {
    if (translation && *translation) assign(ckpt, "translation/", **translation);
    if (segmentation && *segmentation) assign(ckpt, "segmentation/", **segmentation);
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    json header;
    header["format"] = kCheckpointFormat;
    header["config"] = ckpt.config;
    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        table.push_back({{"name", t.name}, {"shape", t.value.sizes().vec()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.value.numel()) * sizeof(float);
    }
    header["tensors"] = table;
    const std::string text = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open checkpoint for writing: " + tmp.string());
        const auto len = static_cast<std::uint32_t>(text.size());
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& t : ckpt.tensors) {
            const auto v = t.value.to(torch::kFloat32).contiguous();
            out.write(reinterpret_cast<const char*>(v.data_ptr<float>()),
                      static_cast<std::streamsize>(v.numel() * sizeof(float)));
        }
        out.flush();
        if (!out) throw IoError("failed writing checkpoint (disk full?): " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw CorruptData("not a checkpoint file: " + path.string());
    std::uint32_t len;
    std::memcpy(&len, bytes.data() + 8, sizeof len);
    if (bytes.size() < 12ull + len) throw CorruptData("truncated checkpoint header: " + path.string());

    json header;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
    } catch (const json::exception& e) {
        throw CorruptData("bad checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format", std::string{}) != kCheckpointFormat)
        throw CorruptData("unexpected checkpoint format in " + path.string());

    Checkpoint ckpt;
    ckpt.config = header.value("config", json::object());
    const std::size_t data_start = 12ull + len;
    for (const auto& entry : header.at("tensors")) {
        const auto shape = entry.at("shape").get<std::vector<int64_t>>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        auto t = torch::empty(shape, torch::kFloat32);
        const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * sizeof(float);
        if (data_start + offset + nbytes > bytes.size())
            throw CorruptData("truncated checkpoint data: " + path.string());
        std::memcpy(t.data_ptr<float>(), bytes.data() + data_start + offset, nbytes);
        ckpt.tensors.push_back({entry.at("name").get<std::string>(), t});
    }
    return ckpt;
}

}  // namespace uada
