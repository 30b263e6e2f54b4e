#pragma once

#include "ddn/dataset.hpp"
#include "ddn/layer.hpp"
#include "ddn/samplers.hpp"
#include "ddn/split_prune.hpp"
#include "ddn/tensor/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <vector>

namespace ddn {

enum class Paradigm { single_shot, recurrence };

struct ModelConfig {
    int K = 8;
    int L = 3;
    Paradigm paradigm = Paradigm::recurrence;
    Index channels = 1;
    Index height = 28;
    Index width = 28;
    /// Recurrence uses three UNet widths; single-shot uses the first only.
    std::vector<Index> widths{16, 32, 64};
    float chain_dropout = 0.05f;
    bool residual = true;
    bool leak = true;
    Index leak_channels = 4;
    bool split_prune = true;
    int class_count = 0;
    Index class_embed = 16;

    Shape image_shape() const { return {channels, height, width}; }
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
std::string paradigm_name(Paradigm p);
Paradigm parse_paradigm(const std::string& s);

using LatentPath = std::vector<int>;

/// Picks the node for sample `n` given that sample's candidates.
using NodeChooser = std::function<int(Index n, const CandidateSet& cands)>;

struct ForwardResult {
    std::vector<Var> outputs;          // per layer, [N,C,H,W]
    std::vector<LatentPath> latents;   // per sample, length L
};

struct ConvParams {
    Parameter w;
    Parameter b;
};

/// Full DDN: trunk blocks plus output node banks. Parameters are addressed by
/// pointer from optimizer state, so a Network never moves once built.
class Network {
public:
    Network(ModelConfig config, std::uint64_t seed);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    const ModelConfig& config() const { return config_; }

    /// Every trainable parameter in a fixed order.
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    Index parameter_count() const;

    int bank_count() const { return static_cast<int>(banks_.size()); }
    OutputNodeBank& bank(int index) { return banks_.at(static_cast<std::size_t>(index)); }
    const OutputNodeBank& bank(int index) const { return banks_.at(static_cast<std::size_t>(index)); }
    /// Which bank layer `l` draws from.
    int bank_of_layer(int layer) const { return config_.paradigm == Paradigm::recurrence ? 0 : layer; }

    /// Runs the first `layers` layers (all L when 0) for `n` samples. `labels`
    /// must hold n entries when the model is class-conditional and be empty
    /// otherwise.
    ForwardResult forward(Tape& tape, Index n, std::span<const int> labels, const NodeChooser& choose,
                          int layers = 0);

    /// Uniform random choice at every layer.
    ForwardResult generate(Index n, std::uint64_t seed, std::span<const int> labels = {});
    /// Nearest candidate at every layer; `x` is [N,C,H,W].
    ForwardResult reconstruct(const Array& x, std::span<const int> labels = {});
    /// Follows the given paths.
    ForwardResult decode(std::span<const LatentPath> latents, std::span<const int> labels = {});
    /// Candidates offered to one sample after following `prefix` (shorter than L).
    CandidateSet candidates_after(const LatentPath& prefix, std::span<const int> labels = {});
    /// One sample steered by `spec`. No gradients are requested.
    ForwardResult zscg(const SamplerSpec& spec, std::span<const int> labels = {});

private:
    struct Block {
        std::vector<ConvParams> convs;
        Parameter stem;
    };

    Var run_block(Tape& tape, Block& block, const Var& input);
    Block make_block(const std::string& name, Index in_channels, std::mt19937_64& rng);
    Index block_input_channels() const;
    void check_labels(Index n, std::span<const int> labels) const;

    ModelConfig config_;
    std::vector<Block> blocks_;
    std::vector<OutputNodeBank> banks_;
    std::optional<Parameter> embed_;
};

struct TrainOptions {
    AdamConfig adam{};
    std::uint64_t seed = 0;
    /// When positive, the learning rate follows a half cosine from adam.lr
    /// down to lr_floor * adam.lr over this many steps, then stays there.
    std::int64_t cosine_steps = 0;
    float lr_floor = 0.05f;
    /// Optional JSON-lines sink for split/prune events.
    std::ostream* event_log = nullptr;
};

struct TrainMetrics {
    std::int64_t step = 0;
    double loss = 0.0;
    std::vector<double> layer_losses;
    int events = 0;
    std::vector<LatentPath> latents;

    nlohmann::json to_json() const;
};

/// Owns optimizer and split/prune state for one network.
class Trainer {
public:
    Trainer(Network& net, TrainOptions options);

    /// One optimization step on a batch [N,C,H,W].
    TrainMetrics step(const Array& batch, std::span<const int> labels = {});

    /// Shuffled pass over `data`, calling `on_step` after every batch.
    void train_epoch(const Dataset& data, int batch_size,
                     const std::function<void(const TrainMetrics&)>& on_step = {});

    std::int64_t step_count() const { return step_; }
    /// Learning rate applied by the next step.
    float learning_rate() const;
    const SplitPruneState& split_prune(int bank) const { return sp_.at(static_cast<std::size_t>(bank)); }
    const std::vector<SplitPruneEvent>& events() const { return events_; }
    AdamState& adam_state(const Parameter& p);

    /// Serializes optimizer moments, counters, step and RNG into `ckpt`.
    void store(CheckpointData& ckpt) const;
    void restore(const CheckpointData& ckpt);

private:
    Network& net_;
    TrainOptions options_;
    std::vector<Parameter*> params_;
    std::vector<AdamState> states_;
    std::vector<SplitPruneState> sp_;
    std::vector<SplitPruneEvent> events_;
    std::int64_t step_ = 0;
    std::mt19937_64 rng_;
};

/// Model weights plus, when given, trainer state.
CheckpointData make_checkpoint(const Network& net, const Trainer* trainer = nullptr);
std::unique_ptr<Network> network_from_checkpoint(const CheckpointData& ckpt);

}  // namespace ddn
