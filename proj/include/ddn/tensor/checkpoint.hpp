#pragma once

#include "ddn/tensor/array.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddn {

struct NamedArray {
    std::string name;
    Array data;
};

/// In-memory image of a checkpoint file.
///
/// On disk: the 8-byte magic "DDNCKPT1", a u64 little-endian byte length,
/// the manifest as compact UTF-8 JSON, then every parameter blob and every
/// optimizer blob as raw little-endian float32 in manifest order. The
/// manifest lists names and shapes of both blob groups alongside `meta`.
struct CheckpointData {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> parameters;
    std::vector<NamedArray> optimizer;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[] = "DDNCKPT1";

void write_checkpoint(std::ostream& out, const CheckpointData& data);
CheckpointData read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace ddn
