#include "ddn/classifier.hpp"
#include "ddn/density_toy.hpp"
#include "ddn/io.hpp"
#include "ddn/latent.hpp"
#include "ddn/network.hpp"
#include "ddn/run_config.hpp"
#include "ddn/service.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace ddn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path output_root() {
    const char* env = std::getenv("DDN_OUT");
    return env && *env ? fs::path(env) : fs::path(".");
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error(fmt::format("cannot read {}", p.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

LatentPath parse_path(const std::string& text) {
    LatentPath out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) out.push_back(std::stoi(part));
    return out;
}

std::vector<int> repeat_label(std::optional<int> label, Index n) {
    if (!label) return {};
    return std::vector<int>(static_cast<std::size_t>(n), *label);
}

// Labels 0,1,2,... cycling over the classes, for sample grids of conditional models.
std::vector<int> cycling_labels(const Network& net, Index n) {
    const int classes = net.config().class_count;
    std::vector<int> out;
    if (classes == 0) return out;
    for (Index i = 0; i < n; ++i) out.push_back(static_cast<int>(i % classes));
    return out;
}

void write_grid(const fs::path& path, const Array& images) {
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(images.dim(0)))));
    io::write_png(path, io::make_grid(images, cols));
}

Dataset load_limited(const std::string& path, const std::string& kind, const std::string& split, Index limit) {
    Dataset d = ingest(path, kind, split);
    if (limit > 0 && limit < d.size()) d = slice(d, 0, limit);
    return d;
}

// ---- train

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    bool resume = false;
};

int cmd_train(const TrainArgs& a) {
    KeyValues kv = a.config.empty() ? KeyValues{} : parse_key_values(read_text(a.config));
    apply_overrides(kv, a.overrides);
    RunConfig cfg = run_config_from(kv);
    if (cfg.dataset.empty()) throw std::invalid_argument("config: dataset is required");

    const fs::path out = output_root() / cfg.out;
    fs::create_directories(out);
    {
        std::ofstream f(out / "config.txt");
        for (const auto& [k, v] : cfg.to_key_values()) f << k << " = " << v << "\n";
    }
    Dataset data = load_limited(cfg.dataset, cfg.kind, cfg.split, cfg.limit);
    const Shape shape = data.image_shape();
    cfg.model.channels = shape[0];
    cfg.model.height = shape[1];
    cfg.model.width = shape[2];
    if (cfg.conditional) {
        if (!data.labelled()) throw std::invalid_argument("conditional training needs labels");
        cfg.model.class_count = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    }
    cfg.model.validate();

    const fs::path ckpt_path = out / "checkpoint.ckpt";
    std::unique_ptr<Network> net;
    std::optional<CheckpointData> resumed;
    int start_epoch = 0;
    if (a.resume && fs::exists(ckpt_path)) {
        resumed = load_checkpoint(ckpt_path);
        net = network_from_checkpoint(*resumed);
        start_epoch = resumed->meta.value("run", json::object()).value("epoch", 0);
    } else {
        net = std::make_unique<Network>(cfg.model, cfg.seed);
    }

    const std::int64_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::ofstream events(out / "events.jsonl", resumed ? std::ios::app : std::ios::trunc);
    TrainOptions options{.adam = cfg.adam,
                         .seed = cfg.seed,
                         .cosine_steps = cfg.cosine ? steps_per_epoch * cfg.epochs : 0,
                         .lr_floor = cfg.lr_floor,
                         .event_log = &events};
    Trainer trainer(*net, options);
    if (resumed) trainer.restore(*resumed);

    auto save = [&](int epoch) {
        CheckpointData ckpt = make_checkpoint(*net, &trainer);
        ckpt.meta["run"] = {{"epoch", epoch}, {"config", cfg.to_key_values()}};
        save_checkpoint(ckpt_path, ckpt);
    };
    std::ofstream metrics(out / "metrics.jsonl", resumed ? std::ios::app : std::ios::trunc);
    if (cfg.epochs == 0 || start_epoch == 0) save(start_epoch);
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        trainer.train_epoch(data, cfg.batch_size, [&](const TrainMetrics& m) {
            json j = m.to_json();
            j["epoch"] = epoch;
            j["lr"] = trainer.learning_rate();
            metrics << j.dump() << "\n";
            if (m.step % 100 == 0) fmt::print("epoch {} step {} J {:.5f}\n", epoch, m.step, m.loss);
        });
        metrics.flush();
        const Index n = cfg.grid_samples;
        const auto labels = cycling_labels(*net, n);
        write_grid(out / fmt::format("samples_epoch{:03d}.png", epoch + 1),
                   net->generate(n, cfg.seed, labels).outputs.back().value());
        save(epoch + 1);
    }
    fmt::print("{}\n", json{{"checkpoint", ckpt_path.string()}, {"steps", trainer.step_count()},
                             {"parameters", net->parameter_count()}}.dump());
    return 0;
}

// ---- inference

std::unique_ptr<Network> load_network(const std::string& path) { return network_from_checkpoint(load_checkpoint(path)); }

int cmd_generate(const std::string& ckpt, Index n, std::uint64_t seed, std::optional<int> label, const std::string& out) {
    auto net = load_network(ckpt);
    const auto labels = label ? repeat_label(label, n) : cycling_labels(*net, n);
    const auto r = net->generate(n, seed, labels);
    write_grid(out, r.outputs.back().value());
    json latents = r.latents;
    fmt::print("{}\n", json{{"out", out}, {"latents", latents}}.dump());
    return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& input, const std::string& kind, const std::string& split,
                    Index limit, const std::string& out, const std::string& latent_out) {
    auto net = load_network(ckpt);
    Dataset d;
    if (fs::is_regular_file(input)) {
        const Array img = io::read_png(input, static_cast<int>(net->config().channels));
        d.images = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    } else {
        d = load_limited(input, kind, split, limit);
    }
    const bool conditional = net->config().class_count > 0;
    if (conditional && !d.labelled()) throw std::invalid_argument("conditional model needs labelled input");
    std::vector<Array> finals;
    std::vector<LatentPath> latents;
    std::vector<double> mse(static_cast<std::size_t>(net->config().L));
    const Index chunk = 250;
    for (Index b = 0; b < d.size(); b += chunk) {
        const Dataset part = slice(d, b, std::min(d.size(), b + chunk));
        const auto r = conditional ? net->reconstruct(part.images, part.labels) : net->reconstruct(part.images);
        for (std::size_t l = 0; l < mse.size(); ++l) {
            for (Index i = 0; i < part.size(); ++i) {
                mse[l] += mean_squared_error(take0(r.outputs[l].value(), i), take0(part.images, i)) / static_cast<double>(d.size());
            }
        }
        for (Index i = 0; i < part.size(); ++i) finals.push_back(take0(r.outputs.back().value(), i));
        latents.insert(latents.end(), r.latents.begin(), r.latents.end());
    }
    if (!out.empty()) {
        const Index show = std::min<Index>(64, d.size());
        std::vector<Array> pairs;
        for (Index i = 0; i < show; ++i) pairs.push_back(take0(d.images, i));
        for (Index i = 0; i < show; ++i) pairs.push_back(finals[static_cast<std::size_t>(i)]);
        io::write_png(out, io::make_grid(stack0<float>(pairs), static_cast<int>(show)));
    }
    if (!latent_out.empty()) {
        std::vector<LatentCode> codes;
        for (const auto& p : latents) codes.push_back({net->config().K, p});
        write_latent_file(latent_out, net->config().K, net->config().L, codes);
    }
    json j{{"count", d.size()}, {"layer_mse", mse}};
    if (d.size() <= 16) j["latents"] = latents;
    fmt::print("{}\n", j.dump());
    return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& path, const std::string& latent_file, std::optional<int> label,
               const std::string& out) {
    auto net = load_network(ckpt);
    std::vector<LatentPath> paths;
    if (!latent_file.empty()) {
        for (const auto& c : read_latent_file(latent_file)) paths.push_back(c.indices);
    } else {
        paths.push_back(parse_path(path));
    }
    const auto r = net->decode(paths, repeat_label(label, static_cast<Index>(paths.size())));
    const Array& images = r.outputs.back().value();
    if (paths.size() == 1) {
        io::write_png(out, take0(images, 0));
    } else {
        write_grid(out, images);
    }
    fmt::print("{}\n", json{{"out", out}, {"count", paths.size()}}.dump());
    return 0;
}

struct ZscgArgs {
    std::string checkpoint, guide, condition, scorer_cmd, classifier, out;
    std::uint64_t seed = 0;
    std::optional<int> label;
};

int cmd_zscg(const ZscgArgs& a) {
    auto net = load_network(a.checkpoint);
    GuideInputs in;
    in.seed = a.seed;
    if (!a.condition.empty()) in.condition = io::read_png(a.condition, static_cast<int>(net->config().channels));
    std::unique_ptr<SmallCnn> cls;
    if (!a.classifier.empty()) {
        cls = SmallCnn::from_checkpoint(load_checkpoint(a.classifier));
        in.scorer = as_scorer(*cls);
    } else if (!a.scorer_cmd.empty()) {
        in.scorer = subprocess_scorer(a.scorer_cmd);
    }
    const SamplerSpec spec = parse_guide(a.guide, in, net->config().image_shape());
    const auto r = net->zscg(spec, repeat_label(a.label, 1));
    io::write_png(a.out, take0(r.outputs.back().value(), 0));
    fmt::print("{}\n", json{{"out", a.out}, {"latent", r.latents.front()}}.dump());
    return 0;
}

// ---- density toys

struct DensityArgs {
    std::string target = "gmm", mode = "split-prune", out;
    int k = 100;
    std::int64_t iters = 0, snapshot_every = 0;
    std::uint64_t seed = 0;
    float lr = 0.01f;
    std::string image;
};

void write_points_csv(const fs::path& p, const RowMatrix<double>& pts) {
    std::ofstream f(p);
    f << (pts.cols() == 1 ? "x\n" : "x,y\n");
    for (Index i = 0; i < pts.rows(); ++i) {
        for (Index j = 0; j < pts.cols(); ++j) f << (j ? "," : "") << fmt::format("{:.9g}", pts(i, j));
        f << "\n";
    }
}

int cmd_density(const DensityArgs& a) {
    density::DensityTarget target;
    if (!a.image.empty()) {
        const Array g = io::read_png(a.image, 1);
        target = density::image_target(g.storage(), static_cast<int>(g.dim(1)), static_cast<int>(g.dim(2)));
    } else {
        target = density::builtin_target(a.target);
    }
    const fs::path out = a.out.empty() ? output_root() / "density" : fs::path(a.out);
    fs::create_directories(out);
    density::FitOptions o;
    o.K = a.k;
    o.iters = a.iters;
    o.mode = density::parse_mode(a.mode);
    o.seed = a.seed;
    o.adam.lr = a.lr;
    o.snapshot_every = a.snapshot_every;
    o.on_snapshot = [&](std::int64_t it, const RowMatrix<double>& pts) {
        write_points_csv(out / fmt::format("nodes_{:08d}.csv", it), pts);
    };
    const auto cloud = density::fit<double>(target, o);
    write_points_csv(out / "nodes_final.csv", cloud.points);
    const auto report = density::kl_report(cloud.points, target, {}, density::mode_name(o.mode));
    json j = report.to_json();
    j["target"] = target.name;
    j["K"] = a.k;
    j["events"] = cloud.events;
    std::ofstream(out / "report.json") << j.dump(2) << "\n";
    fmt::print("{}\n", j.dump());
    return 0;
}

// ---- latent tools

int cmd_latent_pack(int K, const std::string& path) {
    const LatentCode code{K, parse_path(path)};
    fmt::print("{}\n", json{{"hex", to_hex(pack_bits(code))}, {"payload_bits", payload_bits(K, code.L())}}.dump());
    return 0;
}

int cmd_latent_unpack(const std::string& hex) {
    if (hex.size() % 2) throw std::invalid_argument("hex string has odd length");
    std::vector<std::uint8_t> bytes;
    for (std::size_t i = 0; i < hex.size(); i += 2) bytes.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    const auto code = unpack_bits(bytes);
    fmt::print("{}\n", json{{"K", code.K}, {"L", code.L()}, {"path", code.indices}}.dump());
    return 0;
}

int cmd_latent_tree(const std::string& ckpt, const std::string& data, Index train_limit, const std::string& out) {
    auto net = load_network(ckpt);
    auto latents_of = [&](const Dataset& d) {
        std::vector<LatentPath> all;
        for (Index b = 0; b < d.size(); b += 250) {
            const auto r = net->reconstruct(slice(d, b, std::min(d.size(), b + 250)).images);
            all.insert(all.end(), r.latents.begin(), r.latents.end());
        }
        return all;
    };
    const Dataset train = load_limited(data, "mnist-idx", "train", train_limit);
    const Dataset test = ingest(data, "mnist-idx", "t10k");
    LatentTreeClassifier tree(10);
    tree.fit(latents_of(train), train.labels);
    const double acc = tree_accuracy(tree, latents_of(test), test.labels);
    if (!out.empty()) std::ofstream(out) << tree.to_json().dump() << "\n";
    fmt::print("{}\n", json{{"train", train.size()}, {"test", test.size()}, {"accuracy", acc}}.dump());
    return 0;
}

int cmd_hierarchy(const std::string& ckpt, std::optional<int> label, const std::string& out) {
    auto net = load_network(ckpt);
    io::write_png(out, render_hierarchy(*net, repeat_label(label, 1)));
    return 0;
}

int cmd_ingest(const std::string& path, const std::string& kind, const std::string& split, const std::string& grid) {
    const Dataset d = ingest(path, kind, split);
    if (!grid.empty()) write_grid(grid, slice(d, 0, std::min<Index>(64, d.size())).images);
    fmt::print("{}\n", json{{"records", d.size()}, {"shape", d.image_shape()}, {"labelled", d.labelled()}}.dump());
    return 0;
}

int cmd_classifier(const std::string& data, int epochs, std::uint64_t seed, const std::string& out) {
    const Dataset train = ingest(data, "mnist-idx", "train");
    const Dataset test = ingest(data, "mnist-idx", "t10k");
    SmallCnn net(ClassifierConfig{}, seed);
    train_classifier(net, train, {.epochs = epochs, .batch_size = 64, .adam = {.lr = 2e-3f}, .seed = seed, .on_step = {}});
    save_checkpoint(out, net.to_checkpoint());
    fmt::print("{}\n", json{{"out", out}, {"test_accuracy", classifier_accuracy(net, test)}}.dump());
    return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& ckpt, const std::string& host, int port, int ttl_minutes) {
    auto net = load_network(ckpt);
    SessionService service(*net, {.idle_ttl = std::chrono::minutes(ttl_minutes)});
    httplib::Server server;
    service.mount(server);
    g_server = &server;
    std::signal(SIGINT, [](int) { g_server->stop(); });
    std::signal(SIGTERM, [](int) { g_server->stop(); });
    fmt::print("serving on http://{}:{}\n", host, port);
    std::fflush(stdout);
    if (!server.listen(host, port)) throw std::runtime_error(fmt::format("cannot listen on {}:{}", host, port));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DDN training, sampling and latent tools"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model from a key = value config");
    t->add_option("-c,--config", train.config, "Config file")->check(CLI::ExistingFile);
    t->add_option("-s,--set", train.overrides, "Override a config key, key=value");
    t->add_flag("--resume", train.resume, "Continue from the run's checkpoint");

    std::string ckpt, out;
    Index n = 64;
    std::uint64_t seed = 0;
    std::optional<int> label;
    auto* g = app.add_subcommand("generate", "Random-path samples as a PNG grid");
    g->add_option("--checkpoint", ckpt)->required();
    g->add_option("-n", n, "Sample count");
    g->add_option("--seed", seed);
    g->add_option("--label", label, "Class for conditional models");
    g->add_option("-o,--out", out)->required();

    std::string input, kind = "mnist-idx", split = "train", latent_out;
    Index limit = 0;
    auto* r = app.add_subcommand("reconstruct", "Guided reconstruction of a PNG or a dataset");
    r->add_option("--checkpoint", ckpt)->required();
    r->add_option("input", input, "PNG file or dataset directory")->required();
    r->add_option("--kind", kind);
    r->add_option("--split", split);
    r->add_option("--limit", limit);
    r->add_option("-o,--out", out, "Originals over reconstructions");
    r->add_option("--latents", latent_out, "Write latents to a latent file");

    std::string path, latent_file;
    auto* d = app.add_subcommand("decode", "Images for latent paths");
    d->add_option("--checkpoint", ckpt)->required();
    auto* path_opt = d->add_option("--path", path, "Comma separated indices, e.g. 0,3,7");
    auto* file_opt = d->add_option("--latent-file", latent_file);
    path_opt->excludes(file_opt);
    d->add_option("--label", label);
    d->add_option("-o,--out", out)->required();

    ZscgArgs z;
    auto* zs = app.add_subcommand("zscg", "Zero-shot conditional generation");
    zs->add_option("--checkpoint", z.checkpoint)->required();
    zs->add_option("guide", z.guide, "sr:<f> | color | inpaint:<mask.png> | class:<id> | guided | random | topk:<k>:<guide> | combo:<w>@<guide>,...")->required();
    zs->add_option("condition", z.condition, "Condition PNG");
    zs->add_option("--scorer", z.scorer_cmd, "Command printing a JSON score array for a directory of PNGs");
    zs->add_option("--classifier", z.classifier, "Classifier checkpoint used as scorer");
    zs->add_option("--seed", z.seed);
    zs->add_option("--label", z.label);
    zs->add_option("-o,--out", z.out)->required();

    DensityArgs da;
    auto* df = app.add_subcommand("density-fit", "Fit K free points to a 1-D or 2-D density");
    df->add_option("--target", da.target, "gmm | ring | two-moons | bimodal | bell | uniform");
    df->add_option("--image", da.image, "Grayscale PNG used as a 2-D density");
    df->add_option("--k", da.k);
    df->add_option("--iters", da.iters, "0 means 10 K");
    df->add_option("--mode", da.mode, "split-prune | grad-only");
    df->add_option("--seed", da.seed);
    df->add_option("--lr", da.lr);
    df->add_option("--snapshot-every", da.snapshot_every);
    df->add_option("-o,--out", da.out);

    auto* lat = app.add_subcommand("latent", "Latent codec and tree tools");
    lat->require_subcommand(1);
    int K = 8;
    auto* lp = lat->add_subcommand("pack", "Path to hex");
    lp->add_option("--k", K)->required();
    lp->add_option("--path", path)->required();
    std::string hex;
    auto* lu = lat->add_subcommand("unpack", "Hex to path");
    lu->add_option("hex", hex)->required();
    std::string data_dir;
    auto* lt = lat->add_subcommand("tree", "Fit the prefix-vote classifier on train latents, score on test");
    lt->add_option("--checkpoint", ckpt)->required();
    lt->add_option("--data", data_dir)->required();
    lt->add_option("--limit", limit, "Train records to use");
    lt->add_option("-o,--out", out, "Tree JSON");
    auto* lh = lat->add_subcommand("hierarchy", "Render the whole latent tree");
    lh->add_option("--checkpoint", ckpt)->required();
    lh->add_option("--label", label);
    lh->add_option("-o,--out", out)->required();

    std::string grid;
    auto* in = app.add_subcommand("ingest", "Load and check a dataset");
    in->add_option("path", input)->required();
    in->add_option("--kind", kind);
    in->add_option("--split", split);
    in->add_option("--grid", grid, "Write the first 64 records as a PNG grid");

    int epochs = 2;
    auto* cl = app.add_subcommand("classifier", "Train the small MNIST classifier");
    cl->add_option("--data", data_dir)->required();
    cl->add_option("--epochs", epochs);
    cl->add_option("--seed", seed);
    cl->add_option("-o,--out", out)->required();

    std::string host = "127.0.0.1";
    int port = 8080, ttl = 30;
    auto* sv = app.add_subcommand("serve", "HTTP session API for guided sampling");
    sv->add_option("--checkpoint", ckpt)->required();
    sv->add_option("--host", host);
    sv->add_option("--port", port);
    sv->add_option("--ttl-minutes", ttl);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*t) return cmd_train(train);
        if (*g) return cmd_generate(ckpt, n, seed, label, out);
        if (*r) return cmd_reconstruct(ckpt, input, kind, split, limit, out, latent_out);
        if (*d) {
            if (path.empty() && latent_file.empty()) throw std::invalid_argument("decode needs --path or --latent-file");
            return cmd_decode(ckpt, path, latent_file, label, out);
        }
        if (*zs) return cmd_zscg(z);
        if (*df) return cmd_density(da);
        if (*lp) return cmd_latent_pack(K, path);
        if (*lu) return cmd_latent_unpack(hex);
        if (*lt) return cmd_latent_tree(ckpt, data_dir, limit, out);
        if (*lh) return cmd_hierarchy(ckpt, label, out);
        if (*in) return cmd_ingest(input, kind, split, grid);
        if (*cl) return cmd_classifier(data_dir, epochs, seed, out);
        if (*sv) return cmd_serve(ckpt, host, port, ttl);
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 0;
}
