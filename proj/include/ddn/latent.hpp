#pragma once

#include "ddn/network.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace ddn {

/// A leaf path of the K-ary latent tree.
struct LatentCode {
    int K = 0;
    std::vector<int> indices;

    int L() const { return static_cast<int>(indices.size()); }
    friend bool operator==(const LatentCode&, const LatentCode&) = default;
};

class LatentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// ceil(L * log2 K): exact field concatenation for power-of-two K, base-K
/// big-integer packing otherwise.
std::size_t payload_bits(int K, int L);

/// Payload only: the path read as a base-K number (first index most
/// significant), written MSB first and zero padded to whole bytes.
std::vector<std::uint8_t> pack_payload(const LatentCode& code);
LatentCode unpack_payload(std::span<const std::uint8_t> bytes, int K, int L);

/// 8-byte header (u32 LE K, u32 LE L) followed by the payload.
std::vector<std::uint8_t> pack_bits(const LatentCode& code);
LatentCode unpack_bits(std::span<const std::uint8_t> bytes);

/// Latent file: "DDNLAT1", u32 LE K, L, count, then `count` payloads.
void write_latent_file(const std::filesystem::path& path, int K, int L, std::span<const LatentCode> codes);
std::vector<LatentCode> read_latent_file(const std::filesystem::path& path);

std::string to_hex(std::span<const std::uint8_t> bytes);

/// Class votes on every prefix of the latent tree.
class LatentTreeClassifier {
public:
    explicit LatentTreeClassifier(int class_count = 10) : class_count_(class_count) {}

    /// Adds one vote per prefix (the empty prefix included) of every path.
    void fit(std::span<const LatentPath> latents, std::span<const int> labels);
    /// Majority class of the deepest voted prefix; ties go to the lowest class.
    int predict(const LatentPath& latent) const;

    int class_count() const { return class_count_; }
    bool empty() const { return votes_.empty(); }
    const std::map<LatentPath, std::vector<int>>& votes() const { return votes_; }

    /// {"class_count": n, "votes": {"": [...], "3": [...], "3/1": [...]}}
    nlohmann::json to_json() const;
    static LatentTreeClassifier from_json(const nlohmann::json& j);

private:
    int class_count_;
    std::map<LatentPath, std::vector<int>> votes_;
};

double tree_accuracy(const LatentTreeClassifier& tree, std::span<const LatentPath> latents, std::span<const int> labels);

/// Every node output of the full tree, level by level: level l holds K^(l+1)
/// images [K^(l+1), C, H, W] in lexicographic path order.
std::vector<Array> enumerate_tree(Network& net, std::span<const int> labels = {});

/// Recursive grid: each cell holds a node's output in its centre tile,
/// surrounded by its K children; the top-level centre is the mean of all
/// leaves. Needs K^L <= 4096.
Array render_hierarchy(Network& net, std::span<const int> labels = {});
Array render_hierarchy(const std::vector<Array>& levels, int K);

struct SiblingSimilarity {
    double within = 0.0;   // mean pairwise MSE among leaves sharing a parent
    double across = 0.0;   // mean pairwise MSE among leaves with different parents
};

SiblingSimilarity sibling_similarity(const Array& leaves, int K);

}  // namespace ddn
