#include "doctest.h"

#include "ddn/latent.hpp"

#include <filesystem>
#include <random>
#include <set>

using namespace ddn;

namespace {

LatentCode random_code(int K, int L, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(0, K - 1);
    LatentCode c{K, {}};
    for (int i = 0; i < L; ++i) c.indices.push_back(d(rng));
    return c;
}

}  // namespace

TEST_CASE("payload sizes") {
    CHECK(payload_bits(512, 128) == 1152);
    std::mt19937_64 rng(0);
    CHECK(pack_payload(random_code(512, 128, rng)).size() == 144);
    CHECK(payload_bits(2, 10) == 10);
    CHECK(pack_payload(random_code(2, 10, rng)).size() == 2);
    // 3^5 = 243 < 256.
    CHECK(payload_bits(3, 5) == 8);
    CHECK(payload_bits(10, 3) == 10);
    CHECK(pack_bits(random_code(8, 3, rng)).size() == 8 + 2);
}

TEST_CASE("pack layout") {
    // K=2: plain bits, first index most significant, zero padded.
    const auto b = pack_payload({2, {1, 0, 1, 1, 0, 0, 0, 0, 0, 1}});
    CHECK(b == std::vector<std::uint8_t>{0b10110000, 0b01000000});
    // K=8: three bits per index.
    CHECK(pack_payload({8, {7, 0, 5}}) == std::vector<std::uint8_t>{0b11100010, 0b10000000});
    // K=3: 2*9 + 1*3 + 2 = 23 in 5 bits.
    CHECK(pack_payload({3, {2, 1, 2}}) == std::vector<std::uint8_t>{0b10111000});
    const auto full = pack_bits({8, {7, 0, 5}});
    CHECK(to_hex(full) == "0800000003000000e280");
}

TEST_CASE("round trips") {
    std::mt19937_64 rng(1);
    for (int K : {2, 3, 8, 10, 64, 100, 512}) {
        for (int L : {1, 3, 7, 128}) {
            for (int rep = 0; rep < 5; ++rep) {
                const auto c = random_code(K, L, rng);
                CHECK(unpack_payload(pack_payload(c), K, L) == c);
                CHECK(unpack_bits(pack_bits(c)) == c);
            }
        }
    }
    const LatentCode top{7, {6, 6, 6, 6}};
    CHECK(unpack_bits(pack_bits(top)) == top);
}

TEST_CASE("codec errors") {
    CHECK_THROWS_AS(pack_payload({4, {1, 4}}), LatentError);
    CHECK_THROWS_AS(pack_payload({4, {-1}}), LatentError);
    CHECK_THROWS_AS(unpack_payload(std::vector<std::uint8_t>{0x00}, 4, 5), LatentError);
    // Padding must be zero.
    CHECK_THROWS_AS(unpack_payload(std::vector<std::uint8_t>{0x01}, 2, 7), LatentError);
    // 3^2 = 9 needs 4 bits; 0b1111 = 15 is not a valid code.
    CHECK_THROWS_AS(unpack_payload(std::vector<std::uint8_t>{0xf0}, 3, 2), LatentError);
    CHECK_THROWS_AS(unpack_bits(std::vector<std::uint8_t>{1, 2, 3}), LatentError);
}

TEST_CASE("latent file") {
    const auto path = std::filesystem::temp_directory_path() / "ddn_test_latents.bin";
    std::mt19937_64 rng(2);
    std::vector<LatentCode> codes;
    for (int i = 0; i < 20; ++i) codes.push_back(random_code(10, 6, rng));
    write_latent_file(path, 10, 6, codes);
    CHECK(std::filesystem::file_size(path) == 7 + 12 + 20 * 3);
    CHECK(read_latent_file(path) == codes);

    std::vector<LatentCode> mixed{random_code(10, 6, rng), random_code(8, 6, rng)};
    CHECK_THROWS_AS(write_latent_file(path, 10, 6, mixed), LatentError);
    std::filesystem::resize_file(path, 25);
    CHECK_THROWS_AS(read_latent_file(path), LatentError);
    std::filesystem::remove(path);
}

TEST_CASE("tree classifier") {
    SUBCASE("single sample predicts its class everywhere on its path") {
        LatentTreeClassifier t(3);
        const std::vector<LatentPath> z{{1, 2, 0}};
        t.fit(z, std::vector<int>{0});
        CHECK(t.predict({1, 2, 0}) == 0);
        CHECK(t.votes().size() == 4);
    }
    SUBCASE("disjoint paths keep their own classes") {
        LatentTreeClassifier t(3);
        const std::vector<LatentPath> z{{0, 0}, {1, 1}};
        t.fit(z, std::vector<int>{2, 1});
        CHECK(t.predict({0, 0}) == 2);
        CHECK(t.predict({1, 1}) == 1);
    }
    SUBCASE("majority at a shared prefix, inheritance and root fallback") {
        LatentTreeClassifier t(3);
        const std::vector<LatentPath> z{{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 0}, {1, 1}};
        t.fit(z, std::vector<int>{0, 0, 0, 1, 2, 2});
        // Unseen leaf under prefix 0, which holds votes {0:3, 1:1}.
        CHECK(t.predict({0, 5}) == 0);
        // Unseen first index: root holds {0:3, 1:1, 2:2}.
        CHECK(t.predict({4, 4}) == 0);
        CHECK(t.votes().at(LatentPath{}) == std::vector<int>{3, 1, 2});
    }
    SUBCASE("ties go to the lowest class") {
        LatentTreeClassifier t(4);
        const std::vector<LatentPath> z{{0}, {0}};
        t.fit(z, std::vector<int>{3, 1});
        CHECK(t.predict({0}) == 1);
    }
    SUBCASE("errors") {
        LatentTreeClassifier t(2);
        CHECK_THROWS_AS(t.predict({0}), std::logic_error);
        const std::vector<LatentPath> z{{0}};
        CHECK_THROWS_AS(t.fit(z, std::vector<int>{2}), std::out_of_range);
    }
    SUBCASE("adding samples never removes votes; json round trip") {
        LatentTreeClassifier t(10);
        std::mt19937_64 rng(3);
        std::vector<LatentPath> z;
        std::vector<int> y;
        for (int i = 0; i < 50; ++i) {
            z.push_back(random_code(4, 3, rng).indices);
            y.push_back(static_cast<int>(rng() % 10));
        }
        t.fit(std::span(z).first(25), std::span(y).first(25));
        const auto before = t.votes();
        t.fit(std::span(z).subspan(25), std::span(y).subspan(25));
        for (const auto& [prefix, counts] : before) {
            const auto& now = t.votes().at(prefix);
            for (std::size_t c = 0; c < counts.size(); ++c) CHECK(now[c] >= counts[c]);
        }
        const auto back = LatentTreeClassifier::from_json(t.to_json());
        CHECK(back.votes() == t.votes());
        CHECK(tree_accuracy(back, z, y) == tree_accuracy(t, z, y));
        // Every path gets a class.
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
                for (int c = 0; c < 4; ++c) CHECK(t.predict({a, b, c}) >= 0);
    }
}

TEST_CASE("hierarchy rendering") {
    // K=3, L=2, 1x1 images: level 0 holds three parents, level 1 nine leaves.
    std::vector<Array> levels{Array({3, 1, 1, 1}, {0.11f, 0.12f, 0.13f}), Array({9, 1, 1, 1})};
    for (Index i = 0; i < 9; ++i) levels[1][i] = 0.8f + 0.01f * static_cast<float>(i);
    const Array canvas = render_hierarchy(levels, 3);
    // Two cells per side: 2*1 + 3 gaps of 1 = 5, then 2*5 + 3 gaps of 2 = 16.
    CHECK(canvas.shape() == Shape{1, 16, 16});
    for (Index i = 0; i < 9; ++i) {
        CHECK(std::count(canvas.storage().begin(), canvas.storage().end(), levels[1][i]) == 1);
    }
    for (Index i = 0; i < 3; ++i) {
        CHECK(std::count(canvas.storage().begin(), canvas.storage().end(), levels[0][i]) >= 1);
    }

    // L=1 is one grid of K tiles around the mean.
    const Array one = render_hierarchy(std::vector<Array>{levels[0]}, 3);
    CHECK(one.shape() == Shape{1, 5, 5});

    ModelConfig c;
    c.K = 3;
    c.L = 2;
    c.height = 8;
    c.width = 8;
    c.widths = {4, 4, 4};
    Network net(c, 0);
    const auto tree = enumerate_tree(net);
    REQUIRE(tree.size() == 2);
    CHECK(tree[1].dim(0) == 9);
    // Leaves 3..5 all start with index 1.
    const std::vector<LatentPath> path{{1, 2}};
    CHECK(take0(tree[1], 5) == take0(net.decode(path).outputs.back().value(), 0));
    CHECK(render_hierarchy(net).rank() == 3);

    c.K = 17;
    c.L = 3;
    Network big(c, 0);
    CHECK_THROWS_AS(enumerate_tree(big), std::invalid_argument);
}

TEST_CASE("sibling similarity") {
    // Two groups of two: siblings identical, groups far apart.
    Array leaves({4, 1, 1, 2}, {0, 0, 0, 0, 1, 1, 1, 1});
    const auto s = sibling_similarity(leaves, 2);
    CHECK(s.within == 0.0);
    CHECK(s.across == doctest::Approx(1.0));
    CHECK_THROWS_AS(sibling_similarity(Array({3, 1, 1, 1}), 2), std::invalid_argument);
}
