#pragma once

#include "ddn/tensor/adam.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace ddn {

/// Match counters for one bank of K output nodes.
///
/// Nodes whose match share exceeds `p_split` are split (cloned into the slot
/// of the least matched node, both halves inheriting half the count); nodes
/// whose share falls below `p_prune` are pruned by that same overwrite, so K
/// stays constant.
struct SplitPruneState {
    SplitPruneState() = default;
    /// Thresholds default to 2/K and 0.5/K; decisions wait until `total`
    /// reaches `warmup_min_total` (default K).
    explicit SplitPruneState(int node_count);

    std::vector<double> counters;
    double total = 0.0;
    double p_split = 0.0;
    double p_prune = 0.0;
    double warmup_min_total = 0.0;

    int node_count() const { return static_cast<int>(counters.size()); }
};

struct SplitPruneEvent {
    int split_src = 0;
    int pruned = 0;
    std::int64_t step = 0;
};

void record_match(SplitPruneState& state, int k_star);

/// Callback that copies everything belonging to slot `src` over slot `dst`.
using SlotCloneFn = std::function<void(int src, int dst)>;

/// Evaluates the split/prune condition once and, if it holds, performs the
/// paired split+prune through `clone_slot`. Ties in argmax/argmin resolve to
/// the lowest index.
std::optional<SplitPruneEvent> check_and_apply(SplitPruneState& state, const SlotCloneFn& clone_slot,
                                               std::int64_t step = 0);

/// A node-slotted parameter together with its optimizer state.
struct SlotBinding {
    Parameter* param;
    AdamState* state;
};

/// Same as above, cloning value and Adam moments of every bound parameter.
std::optional<SplitPruneEvent> check_and_apply(SplitPruneState& state, std::span<const SlotBinding> bank,
                                               std::int64_t step = 0);

void reset(SplitPruneState& state);

nlohmann::json to_json(const SplitPruneState& state);
SplitPruneState split_prune_from_json(const nlohmann::json& j);

/// Appends one JSON line per event: {"step","layer","split_src","pruned"}.
void append_event_log(std::ostream& out, const SplitPruneEvent& event, int layer);

}  // namespace ddn
