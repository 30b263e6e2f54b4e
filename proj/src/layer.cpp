#include "ddn/layer.hpp"

#include <fmt/format.h>

#include <stdexcept>

namespace ddn {

std::vector<Parameter*> OutputNodeBank::parameters() {
    std::vector<Parameter*> out{&proj_w, &proj_b};
    if (leak_w) {
        out.push_back(&*leak_w);
        out.push_back(&*leak_b);
    }
    return out;
}

OutputNodeBank make_output_bank(const std::string& name, int K, Index feature_channels, Index image_channels,
                                Index leak_channels, std::mt19937_64& rng) {
    if (K < 2) throw std::invalid_argument(fmt::format("{}: need K >= 2, got {}", name, K));
    OutputNodeBank bank;
    bank.K = K;
    bank.feature_channels = feature_channels;
    bank.image_channels = image_channels;
    bank.leak_channels = leak_channels;
    std::normal_distribution<float> proj_init(0.0f, 0.1f), leak_init(0.0f, 0.05f);
    Array pw({K, image_channels, feature_channels, 1, 1});
    for (float& v : pw.storage()) v = proj_init(rng);
    bank.proj_w = Parameter(name + ".proj_w", std::move(pw), 0);
    bank.proj_b = Parameter(name + ".proj_b", Array({K, image_channels}), 0);
    if (leak_channels > 0) {
        Array lw({K, leak_channels, feature_channels, 3, 3});
        for (float& v : lw.storage()) v = leak_init(rng);
        bank.leak_w = Parameter(name + ".leak_w", std::move(lw), 0);
        bank.leak_b = Parameter(name + ".leak_b", Array({K, leak_channels}), 0);
    }
    return bank;
}

Array CandidateSet::image(int k) const { return take0(images, k); }

void project_node(const OutputNodeBank& bank, int k, std::span<const float> feature, Index height, Index width,
                  const float* prev, std::span<float> out, std::vector<float>& scratch) {
    kernels::conv_forward(feature, bank.feature_channels, height, width, bank.proj_w.value.slice0(k),
                          bank.proj_b.value.slice0(k), bank.image_channels, 1, out, scratch);
    if (prev != nullptr) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = prev[i] + out[i];
    }
}

CandidateSet emit(const OutputNodeBank& bank, const Array& feature, const Array* prev, bool residual,
                  int layer_index, bool with_leak) {
    if (feature.rank() != 3 || feature.dim(0) != bank.feature_channels) {
        throw_shape_error("emit", {feature.shape()}, fmt::format("expected [{},H,W]", bank.feature_channels));
    }
    const Index h = feature.dim(1), w = feature.dim(2);
    const float* prev_ptr = nullptr;
    if (residual && layer_index > 0) {
        if (prev == nullptr) throw std::invalid_argument("emit: residual mode needs the previous output");
        if (prev->shape() != Shape{bank.image_channels, h, w}) {
            throw_shape_error("emit", {feature.shape(), prev->shape()}, "previous output does not match");
        }
        prev_ptr = prev->ptr();
    }
    CandidateSet cands;
    cands.layer_index = layer_index;
    cands.images = Array({bank.K, bank.image_channels, h, w});
    std::vector<float> scratch;
    for (int k = 0; k < bank.K; ++k) {
        project_node(bank, k, feature.data(), h, w, prev_ptr, cands.images.slice0(k), scratch);
    }
    if (with_leak && bank.has_leak()) {
        Array leak({bank.K, bank.leak_channels, h, w});
        for (int k = 0; k < bank.K; ++k) {
            kernels::conv_forward(feature.data(), bank.feature_channels, h, w, bank.leak_w->value.slice0(k),
                                  bank.leak_b->value.slice0(k), bank.leak_channels, 3, leak.slice0(k), scratch);
        }
        cands.leak_features = std::move(leak);
    }
    return cands;
}

std::vector<double> candidate_distances(const CandidateSet& cands, const Array& target) {
    const Index per = cands.images.stride0();
    if (target.size() != per) {
        throw_shape_error("candidate_distances", {cands.images.shape(), target.shape()});
    }
    std::vector<double> d(static_cast<std::size_t>(cands.count()));
    for (int k = 0; k < cands.count(); ++k) d[static_cast<std::size_t>(k)] = mean_squared_error(cands.images.slice0(k), target.data());
    return d;
}

Selection select_nearest(const CandidateSet& cands, const Array& target) {
    const auto d = candidate_distances(cands, target);
    int best = 0;
    for (int k = 1; k < static_cast<int>(d.size()); ++k) {
        if (d[static_cast<std::size_t>(k)] < d[static_cast<std::size_t>(best)]) best = k;
    }
    return {best, cands.image(best), -d[static_cast<std::size_t>(best)]};
}

double layer_loss(const Selection& sel, const Array& target) { return mean_squared_error(sel.image, target); }

Array next_condition(const Selection& sel, const CandidateSet& cands) {
    if (!cands.leak_features) return sel.image;
    const Array& img = sel.image;
    auto leak = cands.leak_features->slice0(sel.index);
    Shape shape = img.shape();
    shape[0] += cands.leak_features->dim(1);
    std::vector<float> data(img.storage());
    data.insert(data.end(), leak.begin(), leak.end());
    return Array(std::move(shape), std::move(data));
}

Var selected_output(Tape& tape, OutputNodeBank& bank, const Var& feature, const Var& prev,
                    std::span<const Index> slots) {
    Var proj = slot_conv2d(feature, tape.parameter(bank.proj_w), tape.parameter(bank.proj_b), slots);
    return prev.valid() ? add(prev, proj) : proj;
}

Var selected_leak(Tape& tape, OutputNodeBank& bank, const Var& feature, std::span<const Index> slots) {
    if (!bank.has_leak()) throw std::logic_error("selected_leak: bank has no leak branch");
    return slot_conv2d(feature, tape.parameter(*bank.leak_w), tape.parameter(*bank.leak_b), slots);
}

}  // namespace ddn
