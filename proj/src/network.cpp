#include "ddn/network.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ddn {

std::string paradigm_name(Paradigm p) { return p == Paradigm::recurrence ? "recurrence" : "single-shot"; }

Paradigm parse_paradigm(const std::string& s) {
    if (s == "recurrence") return Paradigm::recurrence;
    if (s == "single-shot" || s == "single_shot") return Paradigm::single_shot;
    throw std::invalid_argument(fmt::format("unknown paradigm '{}'", s));
}

void ModelConfig::validate() const {
    if (K < 2) throw std::invalid_argument(fmt::format("config: K must be >= 2, got {}", K));
    if (L < 1) throw std::invalid_argument(fmt::format("config: L must be >= 1, got {}", L));
    if (!(chain_dropout >= 0.0f && chain_dropout <= 1.0f)) {
        throw std::invalid_argument(fmt::format("config: chain_dropout {} outside [0,1]", chain_dropout));
    }
    if (paradigm == Paradigm::recurrence) {
        if (widths.size() != 3) throw std::invalid_argument("config: recurrence needs three widths");
        if (height % 4 != 0 || width % 4 != 0) throw std::invalid_argument("config: recurrence needs H, W divisible by 4");
    }
    if (widths.empty() || std::any_of(widths.begin(), widths.end(), [](Index w) { return w < 1; })) {
        throw std::invalid_argument("config: widths must be positive");
    }
    if (channels < 1 || height < 1 || width < 1) throw std::invalid_argument("config: bad image shape");
    if (class_count < 0) throw std::invalid_argument("config: negative class_count");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"K", c.K},
            {"L", c.L},
            {"paradigm", paradigm_name(c.paradigm)},
            {"channels", c.channels},
            {"height", c.height},
            {"width", c.width},
            {"widths", c.widths},
            {"chain_dropout", c.chain_dropout},
            {"residual", c.residual},
            {"leak", c.leak},
            {"leak_channels", c.leak_channels},
            {"split_prune", c.split_prune},
            {"class_count", c.class_count},
            {"class_embed", c.class_embed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.K = j.at("K").get<int>();
    c.L = j.at("L").get<int>();
    c.paradigm = parse_paradigm(j.at("paradigm").get<std::string>());
    c.channels = j.at("channels").get<Index>();
    c.height = j.at("height").get<Index>();
    c.width = j.at("width").get<Index>();
    c.widths = j.at("widths").get<std::vector<Index>>();
    c.chain_dropout = j.at("chain_dropout").get<float>();
    c.residual = j.at("residual").get<bool>();
    c.leak = j.at("leak").get<bool>();
    c.leak_channels = j.at("leak_channels").get<Index>();
    c.split_prune = j.at("split_prune").get<bool>();
    c.class_count = j.at("class_count").get<int>();
    c.class_embed = j.at("class_embed").get<Index>();
    c.validate();
    return c;
}

namespace {

ConvParams make_conv(const std::string& name, Index cout, Index cin, Index k, std::mt19937_64& rng) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(cin * k * k));
    std::uniform_real_distribution<float> u(-bound, bound);
    Array w({cout, cin, k, k}), b({cout});
    for (float& v : w.storage()) v = u(rng);
    for (float& v : b.storage()) v = u(rng);
    return {Parameter(name + ".w", std::move(w)), Parameter(name + ".b", std::move(b))};
}

Var conv(Tape& tape, ConvParams& p, const Var& x) { return conv2d(x, tape.parameter(p.w), tape.parameter(p.b)); }

Var act(const Var& x) { return leaky_relu(x, 0.2f); }

Var concat2(const Var& a, const Var& b) {
    const Var parts[] = {a, b};
    return concat_channels(parts);
}

}  // namespace

Index Network::block_input_channels() const {
    Index in = config_.widths[0] + config_.channels;
    if (config_.leak) in += config_.leak_channels;
    if (config_.class_count > 0) in += config_.class_embed;
    return in;
}

Network::Block Network::make_block(const std::string& name, Index in, std::mt19937_64& rng) {
    const auto& w = config_.widths;
    Block b;
    b.stem = Parameter(name + ".stem", Array({w[0], config_.height, config_.width}));
    b.convs.push_back(make_conv(name + ".in", w[0], in, 3, rng));
    if (config_.paradigm == Paradigm::recurrence) {
        b.convs.push_back(make_conv(name + ".down1a", w[1], w[0], 3, rng));
        b.convs.push_back(make_conv(name + ".down1b", w[1], w[1], 3, rng));
        b.convs.push_back(make_conv(name + ".down2a", w[2], w[1], 3, rng));
        b.convs.push_back(make_conv(name + ".down2b", w[2], w[2], 3, rng));
        b.convs.push_back(make_conv(name + ".up1", w[1], w[2] + w[1], 3, rng));
        b.convs.push_back(make_conv(name + ".up2", w[0], w[1] + w[0], 3, rng));
    } else {
        b.convs.push_back(make_conv(name + ".mid", w[0], w[0], 3, rng));
    }
    return b;
}

Network::Network(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const Index in = block_input_channels();
    const Index leak = config_.leak ? config_.leak_channels : 0;
    const int copies = config_.paradigm == Paradigm::recurrence ? 1 : config_.L;
    blocks_.reserve(static_cast<std::size_t>(copies));
    banks_.reserve(static_cast<std::size_t>(copies));
    for (int i = 0; i < copies; ++i) {
        const std::string suffix = copies == 1 ? "" : std::to_string(i);
        blocks_.push_back(make_block("trunk" + suffix, in, rng));
        banks_.push_back(make_output_bank("bank" + suffix, config_.K, config_.widths[0], config_.channels, leak, rng));
    }
    if (config_.class_count > 0) {
        std::normal_distribution<float> n01(0.0f, 1.0f);
        Array e({config_.class_count, config_.class_embed});
        for (float& v : e.storage()) v = n01(rng);
        embed_ = Parameter("embed", std::move(e));
    }
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        out.push_back(&blocks_[i].stem);
        for (auto& c : blocks_[i].convs) {
            out.push_back(&c.w);
            out.push_back(&c.b);
        }
        for (Parameter* p : banks_[i].parameters()) out.push_back(p);
    }
    if (embed_) out.push_back(&*embed_);
    return out;
}

std::vector<const Parameter*> Network::parameters() const {
    auto mut = const_cast<Network*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

Index Network::parameter_count() const {
    Index n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

Var Network::run_block(Tape& tape, Block& b, const Var& input) {
    auto& c = b.convs;
    Var z = act(add(conv(tape, c[0], input), tape.parameter(b.stem)));
    if (config_.paradigm == Paradigm::single_shot) return act(conv(tape, c[1], z));
    Var d1 = act(conv(tape, c[2], act(conv(tape, c[1], avgpool2x2(z)))));
    Var d2 = act(conv(tape, c[4], act(conv(tape, c[3], avgpool2x2(d1)))));
    Var u1 = act(conv(tape, c[5], concat2(upsample_nearest2x2(d2), d1)));
    return act(conv(tape, c[6], concat2(upsample_nearest2x2(u1), z)));
}

void Network::check_labels(Index n, std::span<const int> labels) const {
    if (config_.class_count == 0) {
        if (!labels.empty()) throw std::invalid_argument("labels given to a model without class conditioning");
        return;
    }
    if (static_cast<Index>(labels.size()) != n) {
        throw std::invalid_argument(fmt::format("class-conditional model needs {} labels, got {}", n, labels.size()));
    }
    for (int y : labels) {
        if (y < 0 || y >= config_.class_count) {
            throw std::out_of_range(fmt::format("label {} outside [0,{})", y, config_.class_count));
        }
    }
}

ForwardResult Network::forward(Tape& tape, Index n, std::span<const int> labels, const NodeChooser& choose,
                               int layers) {
    check_labels(n, labels);
    const auto& c = config_;
    if (layers < 0 || layers > c.L) throw std::out_of_range(fmt::format("forward: {} layers of {}", layers, c.L));
    const int depth = layers == 0 ? c.L : layers;
    const Index F = c.widths[0], H = c.height, W = c.width;
    Var feature = tape.constant(Array({n, F, H, W}));
    Var image = tape.constant(Array({n, c.channels, H, W}));
    Var leak;
    if (c.leak) leak = tape.constant(Array({n, c.leak_channels, H, W}));
    Var embed;
    if (embed_) {
        std::vector<Index> rows(labels.begin(), labels.end());
        embed = broadcast_spatial(gather_rows(tape.parameter(*embed_), rows), H, W);
    }

    ForwardResult result;
    result.latents.assign(static_cast<std::size_t>(n), LatentPath{});
    std::vector<Index> slots(static_cast<std::size_t>(n));
    for (int l = 0; l < depth; ++l) {
        std::vector<Var> parts{feature, image};
        if (c.leak) parts.push_back(leak);
        if (embed.valid()) parts.push_back(embed);
        Block& block = blocks_[static_cast<std::size_t>(bank_of_layer(l))];
        OutputNodeBank& bank = banks_[static_cast<std::size_t>(bank_of_layer(l))];
        Var f = run_block(tape, block, concat_channels(parts));

        const bool use_prev = c.residual && l > 0;
        for (Index i = 0; i < n; ++i) {
            auto fs = f.value().slice0(i);
            const Array feat({F, H, W}, std::vector<float>(fs.begin(), fs.end()));
            Array prev;
            if (use_prev) prev = take0(image.value(), i);
            const CandidateSet cands = emit(bank, feat, use_prev ? &prev : nullptr, c.residual, l, false);
            const int k = choose(i, cands);
            if (k < 0 || k >= c.K) throw std::out_of_range(fmt::format("layer {}: chooser returned {}", l, k));
            slots[static_cast<std::size_t>(i)] = k;
            result.latents[static_cast<std::size_t>(i)].push_back(k);
        }
        Var next = selected_output(tape, bank, f, use_prev ? image : Var{}, slots);
        if (c.leak && l + 1 < c.L) leak = selected_leak(tape, bank, f, slots);
        image = next;
        feature = f;
        result.outputs.push_back(image);
    }
    return result;
}

ForwardResult Network::generate(Index n, std::uint64_t seed, std::span<const int> labels) {
    Tape tape(false);
    Sampler sampler(SamplerSpec{RandomChoice{}, seed});
    return forward(tape, n, labels, [&](Index, const CandidateSet& cands) { return sampler.choose(cands); });
}

ForwardResult Network::reconstruct(const Array& x, std::span<const int> labels) {
    Shape want = config_.image_shape();
    want.insert(want.begin(), x.rank() > 0 ? x.dim(0) : 0);
    if (x.shape() != want) throw_shape_error("reconstruct", {x.shape(), want});
    Tape tape(false);
    std::vector<Array> targets;
    for (Index i = 0; i < x.dim(0); ++i) targets.push_back(take0(x, i));
    return forward(tape, x.dim(0), labels, [&](Index n, const CandidateSet& cands) {
        return select_nearest(cands, targets[static_cast<std::size_t>(n)]).index;
    });
}

ForwardResult Network::decode(std::span<const LatentPath> latents, std::span<const int> labels) {
    for (const auto& p : latents) {
        if (static_cast<int>(p.size()) != config_.L) {
            throw std::invalid_argument(fmt::format("decode: latent length {} != L={}", p.size(), config_.L));
        }
        for (int k : p) {
            if (k < 0 || k >= config_.K) throw std::out_of_range(fmt::format("decode: index {} outside [0,{})", k, config_.K));
        }
    }
    Tape tape(false);
    return forward(tape, static_cast<Index>(latents.size()), labels, [&](Index n, const CandidateSet& cands) {
        return latents[static_cast<std::size_t>(n)][static_cast<std::size_t>(cands.layer_index)];
    });
}

CandidateSet Network::candidates_after(const LatentPath& prefix, std::span<const int> labels) {
    const int depth = static_cast<int>(prefix.size());
    if (depth >= config_.L) throw std::invalid_argument(fmt::format("candidates_after: prefix of length {} is complete", depth));
    for (int k : prefix) {
        if (k < 0 || k >= config_.K) throw std::out_of_range(fmt::format("candidates_after: index {} outside [0,{})", k, config_.K));
    }
    Tape tape(false);
    CandidateSet captured;
    forward(tape, 1, labels, [&](Index, const CandidateSet& cands) {
        if (cands.layer_index == depth) {
            captured = cands;
            return 0;
        }
        return prefix[static_cast<std::size_t>(cands.layer_index)];
    }, depth + 1);
    return captured;
}

ForwardResult Network::zscg(const SamplerSpec& spec, std::span<const int> labels) {
    Tape tape(false);
    Sampler sampler(spec);
    return forward(tape, 1, labels, [&](Index, const CandidateSet& cands) {
        try {
            return sampler.choose(cands);
        } catch (const ShapeError&) {
            throw;
        } catch (const std::exception& e) {
            throw SamplerError(fmt::format("layer {}: {}", cands.layer_index, e.what()));
        }
    });
}

nlohmann::json TrainMetrics::to_json() const {
    return {{"step", step}, {"J", loss}, {"J_l", layer_losses}, {"events", events}};
}

Trainer::Trainer(Network& net, TrainOptions options)
    : net_(net), options_(options), params_(net.parameters()), rng_(options.seed) {
    for (Parameter* p : params_) states_.push_back(make_adam_state(*p, options_.adam));
    for (int b = 0; b < net_.bank_count(); ++b) sp_.emplace_back(net_.config().K);
}

AdamState& Trainer::adam_state(const Parameter& p) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i] == &p) return states_[i];
    }
    throw std::invalid_argument(fmt::format("trainer: parameter {} not owned", p.name));
}

float Trainer::learning_rate() const {
    const float base = options_.adam.lr;
    if (options_.cosine_steps <= 0) return base;
    const double progress = std::min(1.0, static_cast<double>(step_) / static_cast<double>(options_.cosine_steps));
    const double f = options_.lr_floor + (1.0 - options_.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return static_cast<float>(base * f);
}

TrainMetrics Trainer::step(const Array& batch, std::span<const int> labels) {
    const auto& c = net_.config();
    Shape want = c.image_shape();
    want.insert(want.begin(), batch.rank() > 0 ? batch.dim(0) : 0);
    if (batch.shape() != want) throw_shape_error("train step", {batch.shape(), want});
    const Index n = batch.dim(0);
    std::vector<Array> targets;
    for (Index i = 0; i < n; ++i) targets.push_back(take0(batch, i));

    std::bernoulli_distribution drop(c.chain_dropout);
    std::uniform_int_distribution<int> any(0, c.K - 1);
    Tape tape;
    ForwardResult fr = net_.forward(tape, n, labels, [&](Index i, const CandidateSet& cands) {
        if (c.chain_dropout > 0.0f && drop(rng_)) return any(rng_);
        const int k = select_nearest(cands, targets[static_cast<std::size_t>(i)]).index;
        if (c.split_prune) record_match(sp_[static_cast<std::size_t>(net_.bank_of_layer(cands.layer_index))], k);
        return k;
    });

    Var x = tape.constant(batch);
    std::vector<Var> per_layer;
    TrainMetrics m;
    for (const Var& out : fr.outputs) {
        per_layer.push_back(mse(out, x));
        m.layer_losses.push_back(mean_squared_error(out.value(), batch));
    }
    Var loss = mean_of(per_layer);
    tape.backward(loss);
    const float lr = learning_rate();
    for (auto& st : states_) st.config.lr = lr;
    adam_step(params_, states_);
    ++step_;

    if (c.split_prune) {
        for (int b = 0; b < net_.bank_count(); ++b) {
            std::vector<SlotBinding> bindings;
            for (Parameter* p : net_.bank(b).parameters()) bindings.push_back({p, &adam_state(*p)});
            if (auto ev = check_and_apply(sp_[static_cast<std::size_t>(b)], bindings, step_)) {
                events_.push_back(*ev);
                ++m.events;
                if (options_.event_log) append_event_log(*options_.event_log, *ev, b);
            }
        }
    }
    m.step = step_;
    m.loss = loss.value()[0];
    m.latents = std::move(fr.latents);
    return m;
}

void Trainer::train_epoch(const Dataset& data, int batch_size,
                          const std::function<void(const TrainMetrics&)>& on_step) {
    if (batch_size < 1) throw std::invalid_argument("train_epoch: batch size must be positive");
    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng_);
    const bool labelled = net_.config().class_count > 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
        Dataset batch = gather(data, std::span<const Index>(order).subspan(begin, end - begin));
        auto m = labelled ? step(batch.images, batch.labels) : step(batch.images);
        if (on_step) on_step(m);
    }
}

void Trainer::store(CheckpointData& ckpt) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ckpt.optimizer.push_back({params_[i]->name + ".adam_m", states_[i].m});
        ckpt.optimizer.push_back({params_[i]->name + ".adam_v", states_[i].v});
    }
    nlohmann::json sp = nlohmann::json::array();
    for (const auto& s : sp_) sp.push_back(to_json(s));
    nlohmann::json events = nlohmann::json::array();
    for (const auto& e : events_) events.push_back({e.split_src, e.pruned, e.step});
    std::ostringstream rng;
    rng << rng_;
    const auto& a = options_.adam;
    ckpt.meta["trainer"] = {{"step", step_},
                            {"adam", {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps},
                                      {"t", states_.empty() ? 0 : states_.front().t}}},
                            {"split_prune", sp},
                            {"events", events},
                            {"rng", rng.str()}};
}

void Trainer::restore(const CheckpointData& ckpt) {
    if (!ckpt.meta.contains("trainer")) throw CheckpointError("checkpoint has no trainer state");
    const auto& t = ckpt.meta["trainer"];
    step_ = t.at("step").get<std::int64_t>();
    const auto adam_t = t.at("adam").at("t").get<std::int64_t>();
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const std::string& name = params_[i]->name;
        for (const auto& blob : ckpt.optimizer) {
            if (blob.name == name + ".adam_m") states_[i].m = blob.data;
            if (blob.name == name + ".adam_v") states_[i].v = blob.data;
        }
        if (states_[i].m.shape() != params_[i]->value.shape() || states_[i].v.shape() != params_[i]->value.shape()) {
            throw CheckpointError(fmt::format("optimizer state for {} missing or mis-shaped", name));
        }
        states_[i].t = adam_t;
    }
    const auto& sp = t.at("split_prune");
    if (sp.size() != sp_.size()) throw CheckpointError("split/prune state count mismatch");
    for (std::size_t b = 0; b < sp_.size(); ++b) sp_[b] = split_prune_from_json(sp[b]);
    events_.clear();
    for (const auto& e : t.at("events")) events_.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<std::int64_t>()});
    std::istringstream rng(t.at("rng").get<std::string>());
    rng >> rng_;
}

CheckpointData make_checkpoint(const Network& net, const Trainer* trainer) {
    CheckpointData ckpt;
    const auto& c = net.config();
    ckpt.meta = {{"model", to_json(c)}, {"K", c.K}, {"L", c.L}, {"paradigm", paradigm_name(c.paradigm)}};
    for (const Parameter* p : net.parameters()) ckpt.parameters.push_back({p->name, p->value});
    if (trainer) trainer->store(ckpt);
    return ckpt;
}

std::unique_ptr<Network> network_from_checkpoint(const CheckpointData& ckpt) {
    if (!ckpt.meta.contains("model")) throw CheckpointError("checkpoint has no model config");
    auto net = std::make_unique<Network>(model_config_from_json(ckpt.meta["model"]), 0);
    auto params = net->parameters();
    if (params.size() != ckpt.parameters.size()) {
        throw CheckpointError(fmt::format("checkpoint holds {} parameters, model expects {}", ckpt.parameters.size(),
                                          params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& blob = ckpt.parameters[i];
        if (blob.name != params[i]->name || blob.data.shape() != params[i]->value.shape()) {
            throw CheckpointError(fmt::format("parameter {} {} does not match model's {} {}", blob.name,
                                              shape_string(blob.data.shape()), params[i]->name,
                                              shape_string(params[i]->value.shape())));
        }
        params[i]->value = blob.data;
    }
    return net;
}

}  // namespace ddn
