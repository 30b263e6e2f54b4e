#include "ddn/run_config.hpp"

#include "ddn/io.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <charconv>
#include <sstream>

namespace ddn {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::pair<std::string, std::string> split_assignment(const std::string& line) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(fmt::format("config: expected key = value, got '{}'", line));
    auto key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw std::invalid_argument(fmt::format("config: empty key in '{}'", line));
    return {std::move(key), trim(std::string_view(line).substr(eq + 1))};
}

template <typename T>
T number(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) throw std::invalid_argument(fmt::format("config: {} = '{}' is not a number", key, value));
    return out;
}

bool boolean(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument(fmt::format("config: {} = '{}' is not a boolean", key, value));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string part;
    std::istringstream in(s);
    while (std::getline(in, part, sep)) out.push_back(trim(part));
    return out;
}

Array to_gray(const Array& image) {
    if (image.dim(0) == 1) return image;
    return apply_transform(DomainTransform::grayscale(), image);
}

// Brings a condition to the guide's domain when it was given at full size.
Array condition_for(const DomainTransform& t, const std::optional<Array>& condition, const Shape& image_shape,
                    const std::string& guide) {
    if (!condition) throw std::invalid_argument(fmt::format("guide '{}' needs a condition image", guide));
    Array c = *condition;
    if (t.kind == DomainTransform::Kind::grayscale) c = to_gray(c);
    if (c.shape() == image_shape) return apply_transform(t, c);
    return c;
}

SamplerSpec parse_single(const std::string& text, const GuideInputs& in, const Shape& image_shape) {
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
    auto need_arg = [&] {
        if (arg.empty()) throw std::invalid_argument(fmt::format("guide '{}' needs an argument", head));
    };
    if (head == "random") return {RandomChoice{}, in.seed};
    if (head == "guided") {
        if (!in.condition) throw std::invalid_argument("guide 'guided' needs a condition image");
        return {GuidedL2{*in.condition}, in.seed};
    }
    if (head == "sr") {
        need_arg();
        const auto t = DomainTransform::downsample(number<int>("sr", arg));
        return {TransformGuide{t, condition_for(t, in.condition, image_shape, text)}, in.seed};
    }
    if (head == "color") {
        const auto t = DomainTransform::grayscale();
        return {TransformGuide{t, condition_for(t, in.condition, image_shape, text)}, in.seed};
    }
    if (head == "inpaint") {
        need_arg();
        const Array m = io::read_png(arg, 1);
        Array mask({m.dim(1), m.dim(2)});
        for (Index i = 0; i < mask.size(); ++i) mask[i] = m[i] >= 0.5f ? 1.0f : 0.0f;
        const auto t = DomainTransform::masked(std::move(mask));
        return {TransformGuide{t, condition_for(t, in.condition, image_shape, text)}, in.seed};
    }
    if (head == "class") {
        need_arg();
        if (!in.scorer) throw std::invalid_argument("guide 'class' needs a scorer");
        return {ClassifierGuide{number<int>("class", arg), in.scorer}, in.seed};
    }
    if (head == "topk") {
        need_arg();
        const auto c2 = arg.find(':');
        if (c2 == std::string::npos) throw std::invalid_argument("guide 'topk' expects topk:<k>:<guide>");
        const int k = number<int>("topk", arg.substr(0, c2));
        return {TopK{k, std::make_shared<const SamplerSpec>(parse_single(arg.substr(c2 + 1), in, image_shape))}, in.seed};
    }
    throw std::invalid_argument(fmt::format("unknown guide '{}'", text));
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        auto [k, v] = split_assignment(line);
        kv[k] = v;
    }
    return kv;
}

void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        auto [k, v] = split_assignment(o);
        kv[k] = v;
    }
}

KeyValues RunConfig::to_key_values() const {
    const auto& m = model;
    return {{"dataset", dataset},
            {"kind", kind},
            {"split", split},
            {"limit", std::to_string(limit)},
            {"conditional", conditional ? "true" : "false"},
            {"K", std::to_string(m.K)},
            {"L", std::to_string(m.L)},
            {"paradigm", paradigm_name(m.paradigm)},
            {"widths", fmt::format("{}", fmt::join(m.widths, ","))},
            {"chain_dropout", fmt::format("{}", m.chain_dropout)},
            {"residual", m.residual ? "true" : "false"},
            {"leak", m.leak ? "true" : "false"},
            {"leak_channels", std::to_string(m.leak_channels)},
            {"split_prune", m.split_prune ? "true" : "false"},
            {"epochs", std::to_string(epochs)},
            {"batch_size", std::to_string(batch_size)},
            {"lr", fmt::format("{}", adam.lr)},
            {"beta1", fmt::format("{}", adam.beta1)},
            {"beta2", fmt::format("{}", adam.beta2)},
            {"cosine", cosine ? "true" : "false"},
            {"lr_floor", fmt::format("{}", lr_floor)},
            {"seed", std::to_string(seed)},
            {"out", out},
            {"grid_samples", std::to_string(grid_samples)}};
}

RunConfig run_config_from(const KeyValues& kv) {
    RunConfig c;
    auto& m = c.model;
    for (const auto& [k, v] : kv) {
        if (k == "dataset") c.dataset = v;
        else if (k == "kind") c.kind = v;
        else if (k == "split") c.split = v;
        else if (k == "limit") c.limit = number<Index>(k, v);
        else if (k == "conditional") c.conditional = boolean(k, v);
        else if (k == "K") m.K = number<int>(k, v);
        else if (k == "L") m.L = number<int>(k, v);
        else if (k == "paradigm") m.paradigm = parse_paradigm(v);
        else if (k == "widths") {
            m.widths.clear();
            for (const auto& w : split(v, ',')) m.widths.push_back(number<Index>(k, w));
        }
        else if (k == "chain_dropout") m.chain_dropout = number<float>(k, v);
        else if (k == "residual") m.residual = boolean(k, v);
        else if (k == "leak") m.leak = boolean(k, v);
        else if (k == "leak_channels") m.leak_channels = number<Index>(k, v);
        else if (k == "split_prune") m.split_prune = boolean(k, v);
        else if (k == "epochs") c.epochs = number<int>(k, v);
        else if (k == "batch_size") c.batch_size = number<int>(k, v);
        else if (k == "lr") c.adam.lr = number<float>(k, v);
        else if (k == "beta1") c.adam.beta1 = number<float>(k, v);
        else if (k == "beta2") c.adam.beta2 = number<float>(k, v);
        else if (k == "cosine") c.cosine = boolean(k, v);
        else if (k == "lr_floor") c.lr_floor = number<float>(k, v);
        else if (k == "seed") c.seed = number<std::uint64_t>(k, v);
        else if (k == "out") c.out = v;
        else if (k == "grid_samples") c.grid_samples = number<int>(k, v);
        else throw std::invalid_argument(fmt::format("config: unknown key '{}'", k));
    }
    if (c.kind != "mnist-idx" && c.kind != "image-folder") {
        throw std::invalid_argument(fmt::format("config: kind must be mnist-idx or image-folder, got '{}'", c.kind));
    }
    if (c.epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (c.limit < 0) throw std::invalid_argument("config: limit must be >= 0");
    return c;
}

Dataset ingest(const std::string& path, const std::string& kind, const std::string& split, int channels) {
    if (kind == "mnist-idx") return io::load_mnist_dir(path, split);
    if (kind == "image-folder") return io::load_image_folder(path, channels);
    throw std::invalid_argument(fmt::format("unknown dataset kind '{}'", kind));
}

SamplerSpec parse_guide(const std::string& text, const GuideInputs& inputs, const Shape& image_shape) {
    if (text.rfind("combo:", 0) != 0) return parse_single(text, inputs, image_shape);
    WeightedCombo combo;
    for (const auto& part : split(text.substr(6), ',')) {
        const auto at = part.find('@');
        if (at == std::string::npos) throw std::invalid_argument(fmt::format("combo part '{}' expects <weight>@<guide>", part));
        combo.parts.push_back({std::make_shared<const SamplerSpec>(parse_single(part.substr(at + 1), inputs, image_shape)),
                               number<double>("combo weight", part.substr(0, at))});
    }
    return {std::move(combo), inputs.seed};
}

}  // namespace ddn
