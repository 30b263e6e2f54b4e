#pragma once

#include "ddn/dataset.hpp"
#include "ddn/network.hpp"
#include "ddn/samplers.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace ddn {

/// Plain `key = value` lines; `#` starts a comment. Later keys win.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
/// Applies `key=value` overrides in order.
void apply_overrides(KeyValues& kv, const std::vector<std::string>& overrides);

struct RunConfig {
    ModelConfig model;
    std::string dataset;
    std::string kind = "mnist-idx";  // or image-folder
    std::string split = "train";
    Index limit = 0;                 // keep the first `limit` records when positive
    bool conditional = false;
    int epochs = 1;
    int batch_size = 32;
    AdamConfig adam{.lr = 2e-3f};
    bool cosine = true;
    float lr_floor = 0.05f;
    std::uint64_t seed = 0;
    std::string out = "run";
    int grid_samples = 64;

    /// Every key this schema accepts, with its current value.
    KeyValues to_key_values() const;
};

/// Unknown keys and malformed values throw std::invalid_argument.
RunConfig run_config_from(const KeyValues& kv);

/// Loads a dataset of kind "mnist-idx" (directory holding the IDX files of
/// `split`) or "image-folder".
Dataset ingest(const std::string& path, const std::string& kind, const std::string& split = "train", int channels = 0);

struct GuideInputs {
    std::optional<Array> condition;  // [C,H,W] at the model's or the transformed resolution
    ClassScorer scorer;
    std::uint64_t seed = 0;
};

/// Guide strings:
///   sr:<f>              condition downsampled f x f
///   color               condition is the grayscale version
///   inpaint:<mask.png>  mask white = known pixel, condition holds them
///   class:<id>          scorer steers toward class id
///   guided              plain L2 to the condition
///   random
///   topk:<k>:<guide>
///   combo:<w>@<guide>,<w>@<guide>[,...]
/// `image_shape` is the model's [C,H,W]; full-size conditions are
/// transformed to the guide's domain.
SamplerSpec parse_guide(const std::string& text, const GuideInputs& inputs, const Shape& image_shape);

}  // namespace ddn
