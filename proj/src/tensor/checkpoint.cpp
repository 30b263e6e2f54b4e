#include "ddn/tensor/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace ddn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("checkpoint: truncated length prefix");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

nlohmann::json describe(const std::vector<NamedArray>& group) {
    auto list = nlohmann::json::array();
    for (const auto& entry : group) list.push_back({{"name", entry.name}, {"shape", entry.data.shape()}});
    return list;
}

std::vector<NamedArray> read_group(std::istream& in, const nlohmann::json& list, std::string_view group) {
    std::vector<NamedArray> out;
    for (const auto& item : list) {
        NamedArray entry;
        entry.name = item.at("name").get<std::string>();
        Shape shape = item.at("shape").get<Shape>();
        entry.data = Array(shape);
        const auto bytes = static_cast<std::streamsize>(entry.data.size() * sizeof(float));
        if (!in.read(reinterpret_cast<char*>(entry.data.ptr()), bytes)) {
            throw CheckpointError(fmt::format("checkpoint: truncated {} blob '{}'", group, entry.name));
        }
        out.push_back(std::move(entry));
    }
    return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const CheckpointData& data) {
    nlohmann::json manifest = {
        {"format", 1},
        {"meta", data.meta},
        {"parameters", describe(data.parameters)},
        {"optimizer", describe(data.optimizer)},
    };
    const std::string text = manifest.dump();
    out.write(kCheckpointMagic, 8);
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* group : {&data.parameters, &data.optimizer}) {
        for (const auto& entry : *group) {
            out.write(reinterpret_cast<const char*>(entry.data.ptr()),
                      static_cast<std::streamsize>(entry.data.size() * sizeof(float)));
        }
    }
    if (!out) throw CheckpointError("checkpoint: write failed");
}

CheckpointData read_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw CheckpointError("checkpoint: bad magic (expected DDNCKPT1)");
    }
    const std::uint64_t length = read_u64(in);
    if (length > (1ull << 32)) throw CheckpointError("checkpoint: implausible manifest length");
    std::string text(length, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw CheckpointError("checkpoint: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(fmt::format("checkpoint: malformed manifest: {}", e.what()));
    }
    if (manifest.value("format", 0) != 1) throw CheckpointError("checkpoint: unsupported format version");
    CheckpointData data;
    data.meta = manifest.at("meta");
    data.parameters = read_group(in, manifest.at("parameters"), "parameter");
    data.optimizer = read_group(in, manifest.at("optimizer"), "optimizer");
    return data;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(fmt::format("checkpoint: cannot open {} for writing", path.string()));
    write_checkpoint(out, data);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(fmt::format("checkpoint: cannot open {}", path.string()));
    return read_checkpoint(in);
}

}  // namespace ddn
