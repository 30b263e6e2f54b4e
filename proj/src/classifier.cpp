#include "ddn/classifier.hpp"

#include "ddn/io.hpp"
#include "ddn/tensor/ops.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <random>

namespace ddn {

namespace {

Parameter uniform_param(const std::string& name, Shape shape, Index fan_in, std::mt19937_64& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> u(-bound, bound);
    Array a(std::move(shape));
    for (float& v : a.storage()) v = u(rng);
    return Parameter(name, std::move(a));
}

}  // namespace

SmallCnn::SmallCnn(ClassifierConfig config, std::uint64_t seed) : config_(config) {
    if (config.height % 4 != 0 || config.width % 4 != 0) {
        throw std::invalid_argument("classifier: image size must be divisible by 4");
    }
    std::mt19937_64 rng(seed);
    const auto& c = config_;
    const Index flat = c.conv2 * (c.height / 4) * (c.width / 4);
    w1_ = uniform_param("cls.conv1.w", {c.conv1, c.channels, 3, 3}, c.channels * 9, rng);
    b1_ = uniform_param("cls.conv1.b", {c.conv1}, c.channels * 9, rng);
    w2_ = uniform_param("cls.conv2.w", {c.conv2, c.conv1, 3, 3}, c.conv1 * 9, rng);
    b2_ = uniform_param("cls.conv2.b", {c.conv2}, c.conv1 * 9, rng);
    w3_ = uniform_param("cls.fc1.w", {c.hidden, flat}, flat, rng);
    b3_ = uniform_param("cls.fc1.b", {c.hidden}, flat, rng);
    w4_ = uniform_param("cls.fc2.w", {c.classes, c.hidden}, c.hidden, rng);
    b4_ = uniform_param("cls.fc2.b", {c.classes}, c.hidden, rng);
}

std::vector<Parameter*> SmallCnn::parameters() { return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_, &w4_, &b4_}; }

Var SmallCnn::logits(Tape& tape, const Array& images) {
    const Shape want{images.rank() > 0 ? images.dim(0) : 0, config_.channels, config_.height, config_.width};
    if (images.shape() != want) throw_shape_error("classifier", {images.shape(), want});
    Var x = tape.constant(images);
    x = avgpool2x2(relu(conv2d(x, tape.parameter(w1_), tape.parameter(b1_))));
    x = avgpool2x2(relu(conv2d(x, tape.parameter(w2_), tape.parameter(b2_))));
    x = relu(linear(flatten(x), tape.parameter(w3_), tape.parameter(b3_)));
    return linear(x, tape.parameter(w4_), tape.parameter(b4_));
}

std::vector<std::vector<double>> SmallCnn::probabilities(const Array& images) {
    Tape tape(false);
    const Array& z = logits(tape, images).value();
    const Index n = z.dim(0), c = z.dim(1);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(c)));
    for (Index i = 0; i < n; ++i) {
        double hi = z[i * c];
        for (Index j = 1; j < c; ++j) hi = std::max<double>(hi, z[i * c + j]);
        double sum = 0.0;
        auto& row = out[static_cast<std::size_t>(i)];
        for (Index j = 0; j < c; ++j) sum += row[static_cast<std::size_t>(j)] = std::exp(z[i * c + j] - hi);
        for (double& p : row) p /= sum;
    }
    return out;
}

std::vector<int> SmallCnn::predict(const Array& images) {
    std::vector<int> out;
    for (const auto& row : probabilities(images)) {
        out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return out;
}

CheckpointData SmallCnn::to_checkpoint() const {
    CheckpointData ckpt;
    const auto& c = config_;
    ckpt.meta = {{"classifier",
                  {{"channels", c.channels}, {"height", c.height}, {"width", c.width}, {"classes", c.classes},
                   {"conv1", c.conv1}, {"conv2", c.conv2}, {"hidden", c.hidden}}}};
    for (const Parameter* p : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_, &w4_, &b4_}) ckpt.parameters.push_back({p->name, p->value});
    return ckpt;
}

std::unique_ptr<SmallCnn> SmallCnn::from_checkpoint(const CheckpointData& ckpt) {
    if (!ckpt.meta.contains("classifier")) throw CheckpointError("not a classifier checkpoint");
    const auto& j = ckpt.meta["classifier"];
    ClassifierConfig c;
    c.channels = j.at("channels");
    c.height = j.at("height");
    c.width = j.at("width");
    c.classes = j.at("classes");
    c.conv1 = j.at("conv1");
    c.conv2 = j.at("conv2");
    c.hidden = j.at("hidden");
    auto net = std::make_unique<SmallCnn>(c, 0);
    auto params = net->parameters();
    if (params.size() != ckpt.parameters.size()) throw CheckpointError("classifier parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (ckpt.parameters[i].data.shape() != params[i]->value.shape()) {
            throw CheckpointError(fmt::format("classifier parameter {} has shape {}", ckpt.parameters[i].name,
                                              shape_string(ckpt.parameters[i].data.shape())));
        }
        params[i]->value = ckpt.parameters[i].data;
    }
    return net;
}

void train_classifier(SmallCnn& net, const Dataset& data, const ClassifierTraining& options) {
    if (!data.labelled()) throw std::invalid_argument("train_classifier: dataset has no labels");
    auto params = net.parameters();
    std::vector<AdamState> states;
    for (Parameter* p : params) states.push_back(make_adam_state(*p, options.adam));
    std::mt19937_64 rng(options.seed);
    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::int64_t step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(options.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(options.batch_size));
            const Dataset batch = gather(data, std::span<const Index>(order).subspan(begin, end - begin));
            const std::vector<Index> labels(batch.labels.begin(), batch.labels.end());
            Tape tape;
            Var loss = softmax_cross_entropy(net.logits(tape, batch.images), labels);
            tape.backward(loss);
            adam_step(params, states);
            ++step;
            if (options.on_step) options.on_step(epoch, step, loss.value()[0]);
        }
    }
}

double classifier_accuracy(SmallCnn& net, const Dataset& data, int batch_size) {
    if (!data.labelled() || data.size() == 0) throw std::invalid_argument("classifier_accuracy: need labelled data");
    Index correct = 0;
    for (Index begin = 0; begin < data.size(); begin += batch_size) {
        const Dataset part = slice(data, begin, std::min<Index>(data.size(), begin + batch_size));
        const auto pred = net.predict(part.images);
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == part.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

ClassScorer as_scorer(SmallCnn& net) {
    return [&net](const Array& images) { return net.probabilities(images); };
}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char ch : s) {
        if (ch == '\'') {
            out += "'\\''";
        } else {
            out += ch;
        }
    }
    return out + "'";
}

}  // namespace

ClassScorer subprocess_scorer(std::string command) {
    return [command](const Array& images) -> std::vector<std::vector<double>> {
        std::string templ = (std::filesystem::temp_directory_path() / "ddn-scorer-XXXXXX").string();
        if (mkdtemp(templ.data()) == nullptr) throw std::runtime_error("scorer: cannot create temp dir");
        const std::filesystem::path dir = templ;
        struct Cleanup {
            std::filesystem::path p;
            ~Cleanup() {
                std::error_code ec;
                std::filesystem::remove_all(p, ec);
            }
        } cleanup{dir};
        for (Index k = 0; k < images.dim(0); ++k) io::write_png(dir / fmt::format("{}.png", k), take0(images, k));

        const std::string cmd = command + " " + shell_quote(dir.string());
        FILE* pipe = popen(cmd.c_str(), "r");
        if (pipe == nullptr) throw std::runtime_error(fmt::format("scorer: cannot run '{}'", command));
        std::string output;
        char buf[4096];
        std::size_t n;
        while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) output.append(buf, n);
        const int status = pclose(pipe);
        if (status != 0) throw std::runtime_error(fmt::format("scorer: '{}' exited with status {}", command, status));

        nlohmann::json j;
        try {
            j = nlohmann::json::parse(output);
        } catch (const nlohmann::json::parse_error& e) {
            throw std::runtime_error(fmt::format("scorer: output is not JSON: {}", e.what()));
        }
        if (!j.is_array() || j.size() != static_cast<std::size_t>(images.dim(0))) {
            throw std::runtime_error(fmt::format("scorer: expected a JSON array of {} entries", images.dim(0)));
        }
        std::vector<std::vector<double>> rows;
        for (const auto& e : j) {
            if (e.is_number()) {
                rows.push_back({e.get<double>()});
            } else {
                rows.push_back(e.get<std::vector<double>>());
            }
        }
        return rows;
    };
}

}  // namespace ddn
