#include "ddn/samplers.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ddn {

DomainTransform DomainTransform::downsample(int factor) {
    DomainTransform t;
    t.kind = Kind::downsample;
    t.factor = factor;
    return t;
}

DomainTransform DomainTransform::grayscale() {
    DomainTransform t;
    t.kind = Kind::grayscale;
    return t;
}

DomainTransform DomainTransform::masked(Array mask) {
    DomainTransform t;
    t.kind = Kind::mask;
    t.mask = std::move(mask);
    return t;
}

Array apply_transform(const DomainTransform& t, const Array& image) {
    if (image.rank() != 3) throw_shape_error("apply_transform", {image.shape()}, "expected [C,H,W]");
    const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
    switch (t.kind) {
        case DomainTransform::Kind::downsample: {
            const Index f = t.factor;
            if (f < 1 || h % f != 0 || w % f != 0) {
                throw_shape_error("apply_transform", {image.shape()}, fmt::format("factor {} does not divide", f));
            }
            Array out({c, h / f, w / f});
            const double inv = 1.0 / static_cast<double>(f * f);
            for (Index ch = 0; ch < c; ++ch)
                for (Index y = 0; y < h / f; ++y)
                    for (Index x = 0; x < w / f; ++x) {
                        double acc = 0.0;
                        for (Index dy = 0; dy < f; ++dy)
                            for (Index dx = 0; dx < f; ++dx) acc += image[(ch * h + y * f + dy) * w + x * f + dx];
                        out[(ch * (h / f) + y) * (w / f) + x] = static_cast<float>(acc * inv);
                    }
            return out;
        }
        case DomainTransform::Kind::grayscale: {
            if (c == 1) return image;
            if (c != 3) throw_shape_error("apply_transform", {image.shape()}, "grayscale needs 1 or 3 channels");
            Array out({1, h, w});
            const Index hw = h * w;
            for (Index i = 0; i < hw; ++i) {
                out[i] = t.luma[0] * image[i] + t.luma[1] * image[hw + i] + t.luma[2] * image[2 * hw + i];
            }
            return out;
        }
        case DomainTransform::Kind::mask: {
            if (t.mask.shape() != Shape{h, w}) throw_shape_error("apply_transform", {image.shape(), t.mask.shape()});
            Array out = image;
            for (Index ch = 0; ch < c; ++ch)
                for (Index i = 0; i < h * w; ++i) out[ch * h * w + i] *= t.mask[i];
            return out;
        }
    }
    throw std::logic_error("apply_transform: unknown kind");
}

int argmax(std::span<const double> scores) {
    if (scores.empty()) throw std::invalid_argument("argmax: no scores");
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

std::vector<int> ranks(std::span<const double> scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    std::vector<int> rank(scores.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
    return rank;
}

int choose_top_k(std::span<const double> scores, int k, std::mt19937_64& rng) {
    if (k < 1 || k > static_cast<int>(scores.size())) {
        throw std::invalid_argument(fmt::format("top-k: k={} outside [1,{}]", k, scores.size()));
    }
    const auto rank = ranks(scores);
    const int pick = std::uniform_int_distribution<int>(0, k - 1)(rng);
    return static_cast<int>(std::find(rank.begin(), rank.end(), pick) - rank.begin());
}

namespace {

std::vector<double> negated_distances(const CandidateSet& cands, const Array& target) {
    auto d = candidate_distances(cands, target);
    for (double& v : d) v = -v;
    return d;
}

void check_weights(std::span<const WeightedPart> parts) {
    if (parts.size() < 2) throw std::invalid_argument("weighted combo: need at least two parts");
    double sum = 0.0;
    for (const auto& p : parts) {
        if (!p.spec) throw std::invalid_argument("weighted combo: missing part");
        if (p.weight < 0.0) throw std::invalid_argument("weighted combo: negative weight");
        sum += p.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument(fmt::format("weighted combo: weights sum to {}", sum));
}

std::vector<double> combined_ranks(std::span<const WeightedPart> parts, const CandidateSet& cands) {
    check_weights(parts);
    std::vector<double> combined(static_cast<std::size_t>(cands.count()), 0.0);
    for (const auto& p : parts) {
        const auto r = ranks(score(*p.spec, cands));
        for (std::size_t k = 0; k < combined.size(); ++k) combined[k] += p.weight * r[k];
    }
    return combined;
}

}  // namespace

std::vector<double> score(const SamplerSpec& spec, const CandidateSet& cands) {
    const auto K = static_cast<std::size_t>(cands.count());
    return std::visit(
        [&](const auto& v) -> std::vector<double> {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GuidedL2>) {
                return negated_distances(cands, v.target);
            } else if constexpr (std::is_same_v<T, ClassifierGuide>) {
                if (!v.scorer) throw std::invalid_argument("classifier guide: no scorer");
                const auto per_image = v.scorer(cands.images);
                if (per_image.size() != K) {
                    throw SamplerError(fmt::format("classifier guide: scorer returned {} rows for {} images",
                                                   per_image.size(), K));
                }
                std::vector<double> s(K);
                for (std::size_t k = 0; k < K; ++k) {
                    if (v.class_id < 0 || static_cast<std::size_t>(v.class_id) >= per_image[k].size()) {
                        throw SamplerError(fmt::format("classifier guide: class {} outside scorer output of {}",
                                                       v.class_id, per_image[k].size()));
                    }
                    s[k] = per_image[k][static_cast<std::size_t>(v.class_id)];
                }
                return s;
            } else if constexpr (std::is_same_v<T, TransformGuide>) {
                std::vector<double> s(K);
                for (std::size_t k = 0; k < K; ++k) {
                    const Array projected = apply_transform(v.transform, cands.image(static_cast<int>(k)));
                    if (projected.shape() != v.condition.shape()) {
                        throw_shape_error("transform guide", {projected.shape(), v.condition.shape()});
                    }
                    s[k] = -mean_squared_error(projected, v.condition);
                }
                return s;
            } else if constexpr (std::is_same_v<T, TopK>) {
                if (!v.inner) throw std::invalid_argument("top-k: no inner spec");
                return score(*v.inner, cands);
            } else if constexpr (std::is_same_v<T, WeightedCombo>) {
                auto c = combined_ranks(v.parts, cands);
                for (double& x : c) x = -x;
                return c;
            } else {
                return std::vector<double>(K, 0.0);
            }
        },
        spec.variant);
}

int combine_ranks(std::span<const WeightedPart> parts, const CandidateSet& cands, std::mt19937_64& rng) {
    auto c = combined_ranks(parts, cands);
    for (double& x : c) x = -x;
    return choose_top_k(c, std::min(2, cands.count()), rng);
}

Sampler::Sampler(SamplerSpec spec) : spec_(std::move(spec)), rng_(spec_.seed) {}

int Sampler::choose(const CandidateSet& cands) {
    return std::visit(
        [&](const auto& v) -> int {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, RandomChoice>) {
                return std::uniform_int_distribution<int>(0, cands.count() - 1)(rng_);
            } else if constexpr (std::is_same_v<T, TopK>) {
                if (v.k > cands.count()) throw std::invalid_argument(fmt::format("top-k: k={} > K={}", v.k, cands.count()));
                return choose_top_k(score(*v.inner, cands), v.k, rng_);
            } else if constexpr (std::is_same_v<T, WeightedCombo>) {
                return combine_ranks(v.parts, cands, rng_);
            } else if constexpr (std::is_same_v<T, External>) {
                if (!v.chooser) throw std::invalid_argument("external: no chooser");
                return v.chooser->await(cands, v.timeout);
            } else {
                return argmax(score(spec_, cands));
            }
        },
        spec_.variant);
}

int Sampler::choose_from_scores(std::span<const double> scores) {
    if (std::holds_alternative<RandomChoice>(spec_.variant)) {
        return std::uniform_int_distribution<int>(0, static_cast<int>(scores.size()) - 1)(rng_);
    }
    if (const auto* t = std::get_if<TopK>(&spec_.variant)) return choose_top_k(scores, t->k, rng_);
    return argmax(scores);
}

int ExternalChooser::await(const CandidateSet& cands, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    pending_ = cands;
    answer_.reset();
    cv_.notify_all();
    const bool got = cv_.wait_for(lock, timeout, [&] { return answer_.has_value(); });
    pending_.reset();
    if (!got) {
        throw SamplerError(fmt::format("external chooser: no choice for layer {} within {} ms", cands.layer_index,
                                       timeout.count()));
    }
    return *answer_;
}

void ExternalChooser::supply(int index) {
    std::lock_guard lock(mutex_);
    if (!pending_) throw std::logic_error("external chooser: nothing pending");
    if (index < 0 || index >= pending_->count()) {
        throw std::out_of_range(fmt::format("external chooser: index {} outside [0,{})", index, pending_->count()));
    }
    answer_ = index;
    cv_.notify_all();
}

std::optional<CandidateSet> ExternalChooser::pending() const {
    std::lock_guard lock(mutex_);
    return pending_;
}

}  // namespace ddn
