#pragma once

#include "illuminorm/dataset.hpp"
#include "illuminorm/nn.hpp"

#include <cstdint>
#include <vector>

namespace illuminorm {

/// From-scratch convolutional classifier trained on one random variant per scene per epoch.
struct ClassifierConfig {
    std::vector<int> widths{16, 32, 64, 128};
    int epochs = 60;
    int batch_size = 16;
    double learning_rate = 1e-4;
    int patience = 10;               // early-stopping epochs without validation improvement
    double validation_fraction = 0.2;  // held out by scene

    void validate() const;
};

struct ClassifierResult {
    double accuracy_no_stopping = 0.0;     // final weights after all epochs
    double accuracy_early_stopping = 0.0;  // best validation weights of the 80:20 run
    double train_accuracy = 0.0;           // no-stopping model on every training image
    int best_epoch = 0;
    int stopped_epoch = 0;
};

/// Splits scene ids by scene, never by image: round(fraction * N) scenes go to validation.
std::pair<std::vector<int>, std::vector<int>> split_by_scene(const DatasetManifest& manifest, double validation_fraction,
                                                             Rng& rng);

/// Class list for a manifest: all seat labels, or the sorted training categories.
std::vector<Label> classifier_classes(const DatasetManifest& train);

class ConvClassifier {
public:
    ConvClassifier(int height, int width, int channels, const std::vector<int>& widths, std::vector<Label> classes,
                   std::uint64_t seed);

    const std::vector<Label>& classes() const { return classes_; }
    std::vector<Label> predict(const std::vector<const Image*>& images) const;

    /// Mean softmax cross-entropy of the batch; gradients accumulated into grads.
    double train_step(const std::vector<const Image*>& images, const std::vector<int>& targets, nn::Adam& optimizer);

    std::vector<nn::Parameter*> parameters() { return net_.parameters(); }
    std::vector<std::vector<float>> snapshot() const;
    void restore(const std::vector<std::vector<float>>& weights);

private:
    nn::Sequential net_;
    std::vector<Label> classes_;
};

/// Trains the no-stopping and the early-stopping variant for one seed and evaluates both on test.
ClassifierResult train_baseline_classifier(const DatasetManifest& train, const DatasetManifest& test,
                                           const ClassifierConfig& config, std::uint64_t seed);

std::vector<ClassifierResult> baseline_classifier(const DatasetManifest& train, const DatasetManifest& test,
                                                  const ClassifierConfig& config, const std::vector<std::uint64_t>& seeds);

}  // namespace illuminorm
