#include "tgsr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "tgsr/errors.hpp"

namespace tgsr {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'T', 'G', 'S', 'R', 'W', 'T', 'S', '1'};

static_assert(std::endian::native == std::endian::little, "weights.bin writer assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw IoError("weights.bin truncated");
    std::uint32_t v;
    std::memcpy(&v, in.data() + pos, 4);
    pos += 4;
    return v;
}

std::uint32_t crc_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    std::string blob(kMagic, sizeof(kMagic));
    put_u32(blob, static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& [name, tensor] : checkpoint.tensors) {
        const auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
        put_u32(blob, static_cast<std::uint32_t>(name.size()));
        blob += name;
        blob += static_cast<char>(0);
        put_u32(blob, static_cast<std::uint32_t>(t.dim()));
        for (auto d : t.sizes()) put_u32(blob, static_cast<std::uint32_t>(d));
        blob.append(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::size_t>(t.numel()) * 4);
    }

    nlohmann::json meta{{"format_version", checkpoint.format_version},
                        {"kind", checkpoint.kind},
                        {"step", checkpoint.step},
                        {"weights_crc32", crc_of(blob)},
                        {"weights_bytes", blob.size()},
                        {"vocab", checkpoint.vocab.to_json()},
                        {"config", checkpoint.config.to_json()},
                        {"metadata", checkpoint.metadata}};

    std::ofstream w(dir / "weights.bin", std::ios::binary);
    w.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    std::ofstream m(dir / "meta.json");
    m << meta.dump(2) << '\n';
    if (!w || !m) throw IoError("failed writing checkpoint to " + dir.string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
    if (!fs::exists(dir / "meta.json")) throw IoError("no checkpoint at " + dir.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_file(dir / "meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ChecksumError(std::string("checkpoint meta.json is corrupt: ") + e.what());
    }
    const int version = meta.value("format_version", 0);
    if (version != kCheckpointFormatVersion)
        throw IncompatibleError("checkpoint format version " + std::to_string(version) +
                                " is not supported by this build (expects version " +
                                std::to_string(kCheckpointFormatVersion) + ")");

    const std::string blob = read_file(dir / "weights.bin");
    if (crc_of(blob) != meta.at("weights_crc32").get<std::uint32_t>())
        throw ChecksumError("checksum mismatch in " + (dir / "weights.bin").string());

    Checkpoint c;
    c.format_version = version;
    c.kind = meta.at("kind").get<std::string>();
    c.step = meta.at("step").get<std::int64_t>();
    c.vocab = Vocabulary::from_json(meta.at("vocab"));
    c.config = TrainConfig::from_json(meta.at("config"));
    c.metadata = meta.value("metadata", nlohmann::json::object());

    if (blob.size() < sizeof(kMagic) || std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
        throw ChecksumError("weights.bin has a bad magic header");
    std::size_t pos = sizeof(kMagic);
    const auto count = get_u32(blob, pos);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get_u32(blob, pos);
        if (pos + name_len + 1 > blob.size()) throw IoError("weights.bin truncated");
        std::string name = blob.substr(pos, name_len);
        pos += name_len;
        const auto dtype = static_cast<std::uint8_t>(blob[pos++]);
        if (dtype != 0) throw IncompatibleError("unsupported tensor dtype tag " + std::to_string(dtype));
        const auto rank = get_u32(blob, pos);
        std::vector<std::int64_t> shape;
        std::int64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(get_u32(blob, pos));
            numel *= shape.back();
        }
        const auto bytes = static_cast<std::size_t>(numel) * 4;
        if (pos + bytes > blob.size()) throw IoError("weights.bin truncated");
        auto t = torch::empty(shape, torch::kFloat32);
        std::memcpy(t.data_ptr<float>(), blob.data() + pos, bytes);
        pos += bytes;
        c.tensors.emplace(std::move(name), std::move(t));
    }
    return c;
}

void store_module(Checkpoint& checkpoint, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true))
        checkpoint.tensors[prefix + "." + p.key()] = p.value().detach().to(torch::kFloat32).clone();
    for (const auto& b : module.named_buffers(true))
        checkpoint.tensors[prefix + "." + b.key()] = b.value().detach().to(torch::kFloat32).clone();
}

void restore_module(const Checkpoint& checkpoint, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto copy_into = [&](const std::string& key, torch::Tensor& target) {
        const auto it = checkpoint.tensors.find(prefix + "." + key);
        if (it == checkpoint.tensors.end()) throw IncompatibleError("checkpoint lacks tensor " + prefix + "." + key);
        if (it->second.sizes() != target.sizes())
            throw IncompatibleError("shape mismatch for " + prefix + "." + key);
        target.copy_(it->second);
    };
    for (auto& p : module.named_parameters(true)) copy_into(p.key(), p.value());
    for (auto& b : module.named_buffers(true)) copy_into(b.key(), b.value());
}

std::uint32_t module_checksum(const torch::nn::Module& module) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto& p : module.named_parameters(true)) {
        const auto t = p.value().detach().to(torch::kFloat32).contiguous();
        crc = crc32(crc, reinterpret_cast<const Bytef*>(p.key().data()), static_cast<uInt>(p.key().size()));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(t.data_ptr<float>()), static_cast<uInt>(t.numel() * 4));
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace tgsr
