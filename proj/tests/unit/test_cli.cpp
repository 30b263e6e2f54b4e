#include "doctest.h"

#include "ddn/io.hpp"
#include "ddn/network.hpp"
#include "ddn/service.hpp"

#include <httplib.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ddn;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / ("ddn_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root / "images");
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (int i = 0; i < 16; ++i) {
            Array img({1, 8, 8});
            for (float& v : img.storage()) v = u(rng) * (i % 2 ? 1.0f : 0.3f);
            io::write_png(root / "images" / (std::to_string(100 + i) + ".png"), img);
        }
        std::ofstream(root / "run.txt") << "dataset = " << (root / "images").string()
                                        << "\nkind = image-folder\nK = 4\nL = 2\nwidths = 4,6,8\n"
                                           "batch_size = 4\ngrid_samples = 4\nseed = 5\n";
    }
    ~Workspace() { fs::remove_all(root); }
};

int run(const Workspace& w, const std::string& args, std::string* output = nullptr) {
    const fs::path log = w.root / "stdout.txt";
    const std::string cmd = "DDN_OUT='" + w.root.string() + "' '" DDN_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(log);
        std::ostringstream s;
        s << in.rdbuf();
        *output = s.str();
    }
    return status;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<nlohmann::json> json_lines(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
    return out;
}

}  // namespace

TEST_CASE("train with zero epochs writes an initialized checkpoint") {
    Workspace w;
    REQUIRE(run(w, "train -c '" + (w.root / "run.txt").string() + "' -s epochs=0 -s out=zero") == 0);
    CHECK(fs::exists(w.root / "zero" / "checkpoint.ckpt"));
    CHECK(json_lines(w.root / "zero" / "metrics.jsonl").empty());
    const auto ckpt = load_checkpoint(w.root / "zero" / "checkpoint.ckpt");
    CHECK(ckpt.meta["trainer"]["step"] == 0);
    Network fresh(network_from_checkpoint(ckpt)->config(), 5);
    auto loaded = network_from_checkpoint(ckpt);
    auto a = fresh.parameters();
    auto b = loaded->parameters();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->value == b[i]->value);
}

TEST_CASE("training is reproducible and resumes monotonically") {
    Workspace w;
    const std::string cfg = "train -c '" + (w.root / "run.txt").string() + "'";
    REQUIRE(run(w, cfg + " -s epochs=2 -s out=a") == 0);
    REQUIRE(run(w, cfg + " -s epochs=2 -s out=b") == 0);
    CHECK(slurp(w.root / "a" / "metrics.jsonl") == slurp(w.root / "b" / "metrics.jsonl"));
    CHECK(slurp(w.root / "a" / "samples_epoch002.png") == slurp(w.root / "b" / "samples_epoch002.png"));

    REQUIRE(run(w, cfg + " -s epochs=1 -s out=r") == 0);
    REQUIRE(run(w, cfg + " -s epochs=3 -s out=r --resume") == 0);
    const auto lines = json_lines(w.root / "r" / "metrics.jsonl");
    REQUIRE(lines.size() == 12);
    for (std::size_t i = 0; i < lines.size(); ++i) CHECK(lines[i]["step"] == static_cast<int>(i + 1));
    CHECK(lines.back()["epoch"] == 2);
    CHECK(fs::exists(w.root / "r" / "samples_epoch003.png"));
}

TEST_CASE("inference commands") {
    Workspace w;
    REQUIRE(run(w, "train -c '" + (w.root / "run.txt").string() + "' -s out=m") == 0);
    const std::string ck = "--checkpoint '" + (w.root / "m" / "checkpoint.ckpt").string() + "' ";
    const fs::path dir = w.root;

    REQUIRE(run(w, "generate " + ck + "-n 4 --seed 2 -o '" + (dir / "g1.png").string() + "'") == 0);
    REQUIRE(run(w, "generate " + ck + "-n 4 --seed 2 -o '" + (dir / "g2.png").string() + "'") == 0);
    CHECK(slurp(dir / "g1.png") == slurp(dir / "g2.png"));

    std::string out;
    REQUIRE(run(w, "reconstruct " + ck + "'" + (dir / "images").string() + "' --kind image-folder --latents '" +
                       (dir / "r.lat").string() + "'", &out) == 0);
    CHECK(nlohmann::json::parse(out)["count"] == 16);
    REQUIRE(run(w, "decode " + ck + "--latent-file '" + (dir / "r.lat").string() + "' -o '" + (dir / "d.png").string() + "'") == 0);

    // A session choosing 3 then 1 ends on the same PNG as decode of that path.
    REQUIRE(run(w, "decode " + ck + "--path 3,1 -o '" + (dir / "p.png").string() + "'") == 0);
    auto net = network_from_checkpoint(load_checkpoint(w.root / "m" / "checkpoint.ckpt"));
    SessionService service(*net);
    const std::string id = service.create({{"seed", 0}}).body["id"];
    service.choose(id, {{"index", 3}});
    const auto final_b64 = service.choose(id, {{"index", 1}}).body["final"].get<std::string>();
    CHECK(final_b64 == httplib::detail::base64_encode(slurp(dir / "p.png")));

    REQUIRE(run(w, "zscg " + ck + "sr:2 '" + (dir / "p.png").string() + "' -o '" + (dir / "z.png").string() + "'", &out) == 0);
    CHECK(nlohmann::json::parse(out)["latent"].size() == 2);
    CHECK(run(w, "zscg " + ck + "sr:x '" + (dir / "p.png").string() + "' -o '" + (dir / "z.png").string() + "'", &out) != 0);
    CHECK(out.find("error") != std::string::npos);

    REQUIRE(run(w, "latent pack --k 8 --path 7,0,5", &out) == 0);
    CHECK(nlohmann::json::parse(out)["hex"] == "0800000003000000e280");
    REQUIRE(run(w, "latent unpack 0800000003000000e280", &out) == 0);
    CHECK(nlohmann::json::parse(out)["path"] == nlohmann::json::array({7, 0, 5}));

    REQUIRE(run(w, "ingest '" + (dir / "images").string() + "' --kind image-folder", &out) == 0);
    CHECK(nlohmann::json::parse(out)["records"] == 16);
    CHECK(run(w, "ingest '" + (dir / "missing").string() + "'") != 0);
}

TEST_CASE("density fit writes nodes and a report") {
    Workspace w;
    std::string out;
    REQUIRE(run(w, "density-fit --target bimodal --k 20 --iters 2000 --snapshot-every 1000 -o '" + (w.root / "d").string() + "'",
                &out) == 0);
    const auto report = nlohmann::json::parse(out);
    CHECK(report["K"] == 20);
    CHECK(fs::exists(w.root / "d" / "nodes_00001000.csv"));
    CHECK(fs::exists(w.root / "d" / "nodes_final.csv"));
    CHECK(fs::exists(w.root / "d" / "report.json"));
}
