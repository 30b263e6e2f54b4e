#include "ddn/latent.hpp"

#include <fmt/format.h>
#include <gmp.h>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace ddn {

namespace {

// RAII holder for one GMP integer.
struct BigInt {
    mpz_t v;
    BigInt() { mpz_init(v); }
    ~BigInt() { mpz_clear(v); }
    BigInt(const BigInt&) = delete;
    BigInt& operator=(const BigInt&) = delete;
};

void check_code(int K, int L) {
    if (K < 2) throw LatentError(fmt::format("latent: K must be >= 2, got {}", K));
    if (L < 0) throw LatentError(fmt::format("latent: negative length {}", L));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + static_cast<std::size_t>(i)]) << (8 * i);
    return v;
}

}  // namespace

std::size_t payload_bits(int K, int L) {
    check_code(K, L);
    BigInt top;
    mpz_ui_pow_ui(top.v, static_cast<unsigned long>(K), static_cast<unsigned long>(L));
    mpz_sub_ui(top.v, top.v, 1);
    return mpz_sgn(top.v) == 0 ? 0 : mpz_sizeinbase(top.v, 2);
}

std::vector<std::uint8_t> pack_payload(const LatentCode& code) {
    check_code(code.K, code.L());
    BigInt value;
    for (std::size_t i = 0; i < code.indices.size(); ++i) {
        const int k = code.indices[i];
        if (k < 0 || k >= code.K) throw LatentError(fmt::format("latent: index {} at layer {} outside [0,{})", k, i, code.K));
        mpz_mul_ui(value.v, value.v, static_cast<unsigned long>(code.K));
        mpz_add_ui(value.v, value.v, static_cast<unsigned long>(k));
    }
    const std::size_t bits = payload_bits(code.K, code.L());
    const std::size_t bytes = (bits + 7) / 8;
    mpz_mul_2exp(value.v, value.v, bytes * 8 - bits);
    std::vector<std::uint8_t> out(bytes, 0);
    if (mpz_sgn(value.v) != 0) {
        const std::size_t used = (mpz_sizeinbase(value.v, 2) + 7) / 8;
        std::size_t written = 0;
        mpz_export(out.data() + (bytes - used), &written, 1, 1, 1, 0, value.v);
    }
    return out;
}

LatentCode unpack_payload(std::span<const std::uint8_t> bytes, int K, int L) {
    const std::size_t bits = payload_bits(K, L);
    const std::size_t want = (bits + 7) / 8;
    if (bytes.size() != want) throw LatentError(fmt::format("latent: payload is {} bytes, expected {}", bytes.size(), want));
    BigInt value, limit;
    if (!bytes.empty()) mpz_import(value.v, bytes.size(), 1, 1, 1, 0, bytes.data());
    const std::size_t pad = want * 8 - bits;
    if (pad > 0 && mpz_scan1(value.v, 0) < pad && mpz_sgn(value.v) != 0) {
        throw LatentError("latent: non-zero padding bits");
    }
    mpz_fdiv_q_2exp(value.v, value.v, pad);
    mpz_ui_pow_ui(limit.v, static_cast<unsigned long>(K), static_cast<unsigned long>(L));
    if (mpz_cmp(value.v, limit.v) >= 0) throw LatentError("latent: payload exceeds K^L");
    LatentCode code{K, std::vector<int>(static_cast<std::size_t>(L))};
    for (int i = L - 1; i >= 0; --i) {
        code.indices[static_cast<std::size_t>(i)] =
            static_cast<int>(mpz_fdiv_q_ui(value.v, value.v, static_cast<unsigned long>(K)));
    }
    return code;
}

std::vector<std::uint8_t> pack_bits(const LatentCode& code) {
    std::vector<std::uint8_t> out;
    put_u32(out, static_cast<std::uint32_t>(code.K));
    put_u32(out, static_cast<std::uint32_t>(code.L()));
    const auto payload = pack_payload(code);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

LatentCode unpack_bits(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) throw LatentError(fmt::format("latent: {} bytes is shorter than the header", bytes.size()));
    const auto K = static_cast<int>(get_u32(bytes, 0));
    const auto L = static_cast<int>(get_u32(bytes, 4));
    return unpack_payload(bytes.subspan(8), K, L);
}

namespace {
constexpr char kLatentMagic[] = "DDNLAT1";
constexpr std::size_t kLatentMagicSize = sizeof(kLatentMagic) - 1;
}  // namespace

void write_latent_file(const std::filesystem::path& path, int K, int L, std::span<const LatentCode> codes) {
    std::vector<std::uint8_t> out(kLatentMagic, kLatentMagic + kLatentMagicSize);
    put_u32(out, static_cast<std::uint32_t>(K));
    put_u32(out, static_cast<std::uint32_t>(L));
    put_u32(out, static_cast<std::uint32_t>(codes.size()));
    for (const auto& c : codes) {
        if (c.K != K || c.L() != L) throw LatentError(fmt::format("latent file: code K={} L={} in a K={} L={} file", c.K, c.L(), K, L));
        const auto p = pack_payload(c);
        out.insert(out.end(), p.begin(), p.end());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LatentError(fmt::format("cannot open {} for writing", path.string()));
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw LatentError(fmt::format("write to {} failed", path.string()));
}

std::vector<LatentCode> read_latent_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LatentError(fmt::format("cannot open {}", path.string()));
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::size_t header = kLatentMagicSize + 12;
    if (bytes.size() < header || !std::equal(kLatentMagic, kLatentMagic + kLatentMagicSize, bytes.begin())) {
        throw LatentError(fmt::format("{}: not a latent file", path.string()));
    }
    const std::span<const std::uint8_t> all(bytes);
    const auto K = static_cast<int>(get_u32(all, kLatentMagicSize));
    const auto L = static_cast<int>(get_u32(all, kLatentMagicSize + 4));
    const auto count = get_u32(all, kLatentMagicSize + 8);
    const std::size_t each = (payload_bits(K, L) + 7) / 8;
    if (bytes.size() != header + each * count) {
        throw LatentError(fmt::format("{}: {} bytes, expected {} for {} codes", path.string(), bytes.size(),
                                      header + each * count, count));
    }
    std::vector<LatentCode> out;
    for (std::uint32_t i = 0; i < count; ++i) out.push_back(unpack_payload(all.subspan(header + i * each, each), K, L));
    return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    std::string s;
    for (auto b : bytes) s += fmt::format("{:02x}", b);
    return s;
}

void LatentTreeClassifier::fit(std::span<const LatentPath> latents, std::span<const int> labels) {
    if (latents.size() != labels.size()) throw std::invalid_argument("tree fit: latents and labels differ in count");
    for (std::size_t i = 0; i < latents.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= class_count_) throw std::out_of_range(fmt::format("tree fit: label {} outside [0,{})", y, class_count_));
        LatentPath prefix;
        for (std::size_t d = 0;; ++d) {
            auto& v = votes_[prefix];
            if (v.empty()) v.assign(static_cast<std::size_t>(class_count_), 0);
            ++v[static_cast<std::size_t>(y)];
            if (d == latents[i].size()) break;
            prefix.push_back(latents[i][d]);
        }
    }
}

int LatentTreeClassifier::predict(const LatentPath& latent) const {
    if (votes_.empty()) throw std::logic_error("tree predict: classifier has no votes");
    for (std::size_t depth = latent.size() + 1; depth-- > 0;) {
        const LatentPath prefix(latent.begin(), latent.begin() + static_cast<std::ptrdiff_t>(depth));
        if (auto it = votes_.find(prefix); it != votes_.end()) {
            const auto& v = it->second;
            return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
        }
    }
    throw std::logic_error("tree predict: root has no votes");
}

nlohmann::json LatentTreeClassifier::to_json() const {
    nlohmann::json votes = nlohmann::json::object();
    for (const auto& [prefix, counts] : votes_) votes[fmt::format("{}", fmt::join(prefix, "/"))] = counts;
    return {{"class_count", class_count_}, {"votes", votes}};
}

LatentTreeClassifier LatentTreeClassifier::from_json(const nlohmann::json& j) {
    LatentTreeClassifier t(j.at("class_count").get<int>());
    for (const auto& [key, counts] : j.at("votes").items()) {
        LatentPath prefix;
        std::size_t at = 0;
        while (at < key.size()) {
            const auto slash = key.find('/', at);
            prefix.push_back(std::stoi(key.substr(at, slash - at)));
            if (slash == std::string::npos) break;
            at = slash + 1;
        }
        t.votes_[prefix] = counts.get<std::vector<int>>();
    }
    return t;
}

double tree_accuracy(const LatentTreeClassifier& tree, std::span<const LatentPath> latents, std::span<const int> labels) {
    if (latents.empty() || latents.size() != labels.size()) throw std::invalid_argument("tree accuracy: bad inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < latents.size(); ++i) hits += tree.predict(latents[i]) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(latents.size());
}

std::vector<Array> enumerate_tree(Network& net, std::span<const int> labels) {
    const int K = net.config().K, L = net.config().L;
    double leaves = 1.0;
    for (int l = 0; l < L; ++l) leaves *= K;
    if (leaves > 4096) throw std::invalid_argument(fmt::format("enumerate_tree: K^L = {} exceeds 4096 leaves", leaves));
    const auto n = static_cast<std::size_t>(leaves);
    std::vector<LatentPath> paths(n, LatentPath(static_cast<std::size_t>(L)));
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t rest = i;
        for (int l = L - 1; l >= 0; --l) {
            paths[i][static_cast<std::size_t>(l)] = static_cast<int>(rest % static_cast<std::size_t>(K));
            rest /= static_cast<std::size_t>(K);
        }
    }
    std::vector<int> label_rows;
    if (!labels.empty()) label_rows.assign(n, labels.front());
    auto result = net.decode(paths, label_rows);

    // Level l keeps one representative leaf per prefix of length l+1.
    std::vector<Array> levels;
    std::size_t stride = n;
    for (int l = 0; l < L; ++l) {
        stride /= static_cast<std::size_t>(K);
        const Array& out = result.outputs[static_cast<std::size_t>(l)].value();
        std::vector<Array> picks;
        for (std::size_t i = 0; i < n; i += stride) picks.push_back(take0(out, static_cast<Index>(i)));
        levels.push_back(stack0<float>(picks));
    }
    return levels;
}

namespace {

struct GridLayout {
    int side;    // cells per row and column
    int centre;  // cell index of the parent tile
};

GridLayout layout_for(int K) {
    int side = 1;
    while (side * side < K + 1) ++side;
    return {side, (side / 2) * side + side / 2};
}

constexpr float kGapValue = 0.5f;

// Copies `img` [C,h,w] into `canvas` [C,H,W] at (y, x), scaled up by `f`.
void blit(Array& canvas, const float* img, Index c, Index h, Index w, Index y, Index x, Index f) {
    const Index H = canvas.dim(1), W = canvas.dim(2);
    for (Index ch = 0; ch < c; ++ch)
        for (Index r = 0; r < h * f; ++r)
            for (Index q = 0; q < w * f; ++q) canvas[(ch * H + y + r) * W + x + q] = img[(ch * h + r / f) * w + q / f];
}

}  // namespace

Array render_hierarchy(const std::vector<Array>& levels, int K) {
    if (levels.empty()) throw std::invalid_argument("render_hierarchy: no levels");
    const int L = static_cast<int>(levels.size());
    const Index C = levels[0].dim(1), h = levels[0].dim(2), w = levels[0].dim(3);
    const auto grid = layout_for(K);

    // Cell sizes per depth: depth L is a single image.
    std::vector<Index> gap(static_cast<std::size_t>(L)), sh(static_cast<std::size_t>(L + 1)), sw(static_cast<std::size_t>(L + 1));
    sh[static_cast<std::size_t>(L)] = h;
    sw[static_cast<std::size_t>(L)] = w;
    for (int d = L - 1; d >= 0; --d) {
        gap[static_cast<std::size_t>(d)] = L - d;
        sh[static_cast<std::size_t>(d)] = grid.side * sh[static_cast<std::size_t>(d + 1)] + (grid.side + 1) * gap[static_cast<std::size_t>(d)];
        sw[static_cast<std::size_t>(d)] = grid.side * sw[static_cast<std::size_t>(d + 1)] + (grid.side + 1) * gap[static_cast<std::size_t>(d)];
    }

    Array mean({C, h, w});
    const Array& leaves = levels.back();
    for (Index i = 0; i < leaves.dim(0); ++i) {
        auto s = leaves.slice0(i);
        for (Index j = 0; j < mean.size(); ++j) mean[j] += s[static_cast<std::size_t>(j)];
    }
    mean.vec() /= static_cast<float>(leaves.dim(0));

    Array canvas({C, sh[0], sw[0]}, kGapValue);
    // Draws the grid for the node at `depth` whose first leaf-order index at
    // each level is `index` (its position among the K^depth prefixes).
    std::function<void(int, Index, Index, Index, const float*)> draw = [&](int depth, Index index, Index y, Index x,
                                                                          const float* centre) {
        if (depth == L) {
            blit(canvas, centre, C, h, w, y, x, 1);
            return;
        }
        const auto d = static_cast<std::size_t>(depth);
        const Index ch = sh[d + 1], cw = sw[d + 1], g = gap[d];
        int child = 0;
        for (int cell = 0; cell < grid.side * grid.side; ++cell) {
            const Index cy = y + g + (cell / grid.side) * (ch + g);
            const Index cx = x + g + (cell % grid.side) * (cw + g);
            if (cell == grid.centre) {
                const Index f = std::max<Index>(1, std::min(ch / h, cw / w));
                for (Index c = 0; c < C; ++c)
                    for (Index i = 0; i < ch * cw; ++i) canvas[(c * sh[0] + cy + i / cw) * sw[0] + cx + i % cw] = 0.0f;
                blit(canvas, centre, C, h, w, cy + (ch - h * f) / 2, cx + (cw - w * f) / 2, f);
            } else if (child < K) {
                const Index next = index * K + child;
                draw(depth + 1, next, cy, cx, levels[d].slice0(next).data());
                ++child;
            }
        }
    };
    draw(0, 0, 0, 0, mean.ptr());
    return canvas;
}

Array render_hierarchy(Network& net, std::span<const int> labels) {
    return render_hierarchy(enumerate_tree(net, labels), net.config().K);
}

SiblingSimilarity sibling_similarity(const Array& leaves, int K) {
    const Index n = leaves.dim(0);
    if (n < 2 * K || n % K != 0) throw std::invalid_argument("sibling_similarity: need at least two sibling groups");
    double within = 0.0, across = 0.0;
    std::int64_t nw = 0, na = 0;
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            const double d = mean_squared_error(leaves.slice0(i), leaves.slice0(j));
            if (i / K == j / K) {
                within += d;
                ++nw;
            } else {
                across += d;
                ++na;
            }
        }
    }
    return {within / static_cast<double>(nw), across / static_cast<double>(na)};
}

}  // namespace ddn
