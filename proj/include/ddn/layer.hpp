#pragma once

#include "ddn/tensor/ops.hpp"

#include <optional>
#include <random>
#include <vector>

namespace ddn {

/// The K output heads of one discrete distribution layer. Every head owns a
/// 1x1 projection from trunk features to image channels and, when leak is
/// enabled, a 3x3 convolution producing extra condition channels. Both are
/// slotted along their leading axis.
struct OutputNodeBank {
    int K = 0;
    Index feature_channels = 0;
    Index image_channels = 0;
    Index leak_channels = 0;
    Parameter proj_w;  // [K, C_img, C_feat, 1, 1]
    Parameter proj_b;  // [K, C_img]
    std::optional<Parameter> leak_w;  // [K, C_leak, C_feat, 3, 3]
    std::optional<Parameter> leak_b;  // [K, C_leak]

    bool has_leak() const { return leak_w.has_value(); }
    std::vector<Parameter*> parameters();
};

OutputNodeBank make_output_bank(const std::string& name, int K, Index feature_channels, Index image_channels,
                                Index leak_channels, std::mt19937_64& rng);

/// Candidates of one sample at one layer.
struct CandidateSet {
    Array images;                        // [K, C, H, W]
    std::optional<Array> leak_features;  // [K, C_leak, H, W]
    int layer_index = 0;

    int count() const { return static_cast<int>(images.dim(0)); }
    Array image(int k) const;
};

struct Selection {
    int index = 0;
    Array image;
    double score = 0.0;
};

/// Writes node k's projection of `feature` [C_feat,H,W] into `out`
/// [C_img,H,W], adding `prev` when given. Shared by every inference path so
/// candidates and the differentiable selection agree bit for bit.
void project_node(const OutputNodeBank& bank, int k, std::span<const float> feature, Index height, Index width,
                  const float* prev, std::span<float> out, std::vector<float>& scratch);

/// All K candidates for one sample. `prev` is required when `residual` is on
/// and the layer is not the first.
CandidateSet emit(const OutputNodeBank& bank, const Array& feature, const Array* prev, bool residual,
                  int layer_index = 0, bool with_leak = true);

/// Per-candidate mean squared distance to `target`.
std::vector<double> candidate_distances(const CandidateSet& cands, const Array& target);

/// Guided choice: lowest distance, ties to the lowest index.
Selection select_nearest(const CandidateSet& cands, const Array& target);

/// Mean squared error of the chosen image against the target.
double layer_loss(const Selection& sel, const Array& target);

/// Selected image with the selected node's leak channels appended.
Array next_condition(const Selection& sel, const CandidateSet& cands);

/// Differentiable selection for a batch: images = prev + proj_{slots[n]}(feature[n]).
/// `prev` may be invalid (no residual or first layer).
Var selected_output(Tape& tape, OutputNodeBank& bank, const Var& feature, const Var& prev,
                    std::span<const Index> slots);
/// Differentiable leak channels for the selected nodes.
Var selected_leak(Tape& tape, OutputNodeBank& bank, const Var& feature, std::span<const Index> slots);

}  // namespace ddn
