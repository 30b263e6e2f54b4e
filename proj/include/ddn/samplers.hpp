#pragma once

#include "ddn/layer.hpp"

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <variant>
#include <vector>

namespace ddn {

/// Pixel-domain projection applied to candidates before comparing with a
/// condition image. Images are [C,H,W].
struct DomainTransform {
    enum class Kind { downsample, grayscale, mask };
    Kind kind = Kind::downsample;
    int factor = 1;
    std::array<float, 3> luma{0.299f, 0.587f, 0.114f};
    Array mask;  // [H,W], 1 keeps a pixel, 0 hides it

    static DomainTransform downsample(int factor);
    static DomainTransform grayscale();
    static DomainTransform masked(Array mask);
};

Array apply_transform(const DomainTransform& t, const Array& image);

/// Black-box classifier: images [N,C,H,W] -> per-image class scores. Never
/// asked for gradients.
using ClassScorer = std::function<std::vector<std::vector<double>>(const Array& images)>;

struct SamplerSpec;

struct GuidedL2 {
    Array target;
};
struct RandomChoice {};
struct ClassifierGuide {
    int class_id = 0;
    ClassScorer scorer;
};
struct TransformGuide {
    DomainTransform transform;
    Array condition;
};
struct TopK {
    int k = 2;
    std::shared_ptr<const SamplerSpec> inner;
};
struct WeightedPart {
    std::shared_ptr<const SamplerSpec> spec;
    double weight = 0.0;
};
struct WeightedCombo {
    std::vector<WeightedPart> parts;
};

class ExternalChooser;
struct External {
    std::shared_ptr<ExternalChooser> chooser;
    std::chrono::milliseconds timeout{60'000};
};

using SamplerVariant =
    std::variant<GuidedL2, RandomChoice, ClassifierGuide, TransformGuide, TopK, WeightedCombo, External>;

struct SamplerSpec {
    SamplerVariant variant;
    std::uint64_t seed = 0;
};

template <typename V>
std::shared_ptr<const SamplerSpec> make_spec(V v, std::uint64_t seed = 0) {
    return std::make_shared<const SamplerSpec>(SamplerSpec{std::move(v), seed});
}

class SamplerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-candidate scores, higher is better. Random and External score zero.
std::vector<double> score(const SamplerSpec& spec, const CandidateSet& cands);

/// Index of the best score; ties go to the lowest index.
int argmax(std::span<const double> scores);

/// Rank of every entry (0 = best), ties ranked by index.
std::vector<int> ranks(std::span<const double> scores);

/// Uniform pick among the k best.
int choose_top_k(std::span<const double> scores, int k, std::mt19937_64& rng);

/// Weighted rank combination: each part ranks the candidates, combined
/// score = sum weight * rank, final pick uniform among the two lowest.
int combine_ranks(std::span<const WeightedPart> parts, const CandidateSet& cands, std::mt19937_64& rng);

/// Stateful chooser bound to one spec; its RNG is seeded from the spec.
class Sampler {
public:
    explicit Sampler(SamplerSpec spec);

    int choose(const CandidateSet& cands);
    int choose_from_scores(std::span<const double> scores);

    const SamplerSpec& spec() const { return spec_; }

private:
    SamplerSpec spec_;
    std::mt19937_64 rng_;
};

/// Rendezvous between a generation loop and an outside decision maker: the
/// loop blocks in await() until supply() delivers an index or the timeout
/// expires.
class ExternalChooser {
public:
    int await(const CandidateSet& cands, std::chrono::milliseconds timeout);
    /// Fails when nothing is pending or the index is out of range.
    void supply(int index);
    std::optional<CandidateSet> pending() const;

private:
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::optional<CandidateSet> pending_;
    std::optional<int> answer_;
};

}  // namespace ddn
