#pragma once

#include "ddn/dataset.hpp"
#include "ddn/samplers.hpp"
#include "ddn/tensor/adam.hpp"
#include "ddn/tensor/checkpoint.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ddn {

struct ClassifierConfig {
    Index channels = 1;
    Index height = 28;
    Index width = 28;
    int classes = 10;
    Index conv1 = 8;
    Index conv2 = 16;
    Index hidden = 64;
};

/// conv3x3-relu-pool, conv3x3-relu-pool, linear-relu, linear. Used as the
/// black-box scorer for class guidance and as an independent judge.
class SmallCnn {
public:
    SmallCnn(ClassifierConfig config, std::uint64_t seed);
    SmallCnn(const SmallCnn&) = delete;
    SmallCnn& operator=(const SmallCnn&) = delete;

    const ClassifierConfig& config() const { return config_; }
    std::vector<Parameter*> parameters();

    Var logits(Tape& tape, const Array& images);
    /// Softmax rows, computed without gradients.
    std::vector<std::vector<double>> probabilities(const Array& images);
    std::vector<int> predict(const Array& images);

    CheckpointData to_checkpoint() const;
    static std::unique_ptr<SmallCnn> from_checkpoint(const CheckpointData& ckpt);

private:
    ClassifierConfig config_;
    Parameter w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_;
};

struct ClassifierTraining {
    int epochs = 1;
    int batch_size = 64;
    AdamConfig adam{.lr = 2e-3f};
    std::uint64_t seed = 0;
    std::function<void(int epoch, std::int64_t step, double loss)> on_step;
};

void train_classifier(SmallCnn& net, const Dataset& data, const ClassifierTraining& options);
double classifier_accuracy(SmallCnn& net, const Dataset& data, int batch_size = 500);

/// Scorer backed by a classifier, returning class probabilities.
ClassScorer as_scorer(SmallCnn& net);

/// Scorer backed by an external program. For every call the candidates are
/// written as 0.png .. (K-1).png into a fresh temporary directory, the
/// command runs with that directory appended as its last argument, and its
/// stdout must be a JSON array of K score rows (or K plain numbers, taken as
/// single-class rows).
ClassScorer subprocess_scorer(std::string command);

}  // namespace ddn
