#include "ddn/split_prune.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cassert>
#include <ostream>
#include <stdexcept>

namespace ddn {

SplitPruneState::SplitPruneState(int node_count)
    : counters(static_cast<std::size_t>(node_count), 0.0),
      p_split(2.0 / node_count),
      p_prune(0.5 / node_count),
      warmup_min_total(node_count) {
    if (node_count < 2) throw std::invalid_argument("SplitPruneState: need at least two nodes");
}

void record_match(SplitPruneState& state, int k_star) {
    if (k_star < 0 || k_star >= state.node_count()) {
        throw std::out_of_range(fmt::format("record_match: node {} outside [0,{})", k_star, state.node_count()));
    }
    state.counters[static_cast<std::size_t>(k_star)] += 1.0;
    state.total += 1.0;
}

std::optional<SplitPruneEvent> check_and_apply(SplitPruneState& state, const SlotCloneFn& clone_slot,
                                               std::int64_t step) {
    if (state.node_count() < 2 || state.total < state.warmup_min_total || state.total <= 0.0) return std::nullopt;
    auto& c = state.counters;
    // std::max_element / min_element return the first extreme, i.e. the lowest index.
    const auto k_max = static_cast<int>(std::max_element(c.begin(), c.end()) - c.begin());
    const auto k_min = static_cast<int>(std::min_element(c.begin(), c.end()) - c.begin());
    const double n = state.total;
    const bool over = c[static_cast<std::size_t>(k_max)] / n > state.p_split;
    const bool under = c[static_cast<std::size_t>(k_min)] / n < state.p_prune;
    if (!over && !under) return std::nullopt;
    // With strict thresholds around 1/K the two extremes cannot coincide.
    assert(k_max != k_min);
    if (k_max == k_min) return std::nullopt;

    clone_slot(k_max, k_min);
    state.total -= c[static_cast<std::size_t>(k_min)];
    const double half = c[static_cast<std::size_t>(k_max)] / 2.0;
    c[static_cast<std::size_t>(k_min)] = half;
    c[static_cast<std::size_t>(k_max)] = half;
    return SplitPruneEvent{k_max, k_min, step};
}

std::optional<SplitPruneEvent> check_and_apply(SplitPruneState& state, std::span<const SlotBinding> bank,
                                               std::int64_t step) {
    for (const auto& b : bank) {
        if (b.param->slot_count() != state.node_count()) {
            throw std::invalid_argument(fmt::format("check_and_apply: parameter {} has {} slots, state has {}",
                                                    b.param->name, b.param->slot_count(), state.node_count()));
        }
    }
    return check_and_apply(
        state,
        [&](int src, int dst) {
            for (const auto& b : bank) slot_clone(*b.param, *b.state, src, dst);
        },
        step);
}

void reset(SplitPruneState& state) {
    std::fill(state.counters.begin(), state.counters.end(), 0.0);
    state.total = 0.0;
}

nlohmann::json to_json(const SplitPruneState& state) {
    return {{"counters", state.counters},
            {"total", state.total},
            {"p_split", state.p_split},
            {"p_prune", state.p_prune},
            {"warmup_min_total", state.warmup_min_total}};
}

SplitPruneState split_prune_from_json(const nlohmann::json& j) {
    SplitPruneState s;
    s.counters = j.at("counters").get<std::vector<double>>();
    s.total = j.at("total").get<double>();
    s.p_split = j.at("p_split").get<double>();
    s.p_prune = j.at("p_prune").get<double>();
    s.warmup_min_total = j.at("warmup_min_total").get<double>();
    return s;
}

void append_event_log(std::ostream& out, const SplitPruneEvent& event, int layer) {
    const nlohmann::json line = {
        {"step", event.step}, {"layer", layer}, {"split_src", event.split_src}, {"pruned", event.pruned}};
    out << line.dump() << '\n';
}

}  // namespace ddn
