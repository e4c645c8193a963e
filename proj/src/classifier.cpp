#include "illuminorm/classifier.hpp"

#include "illuminorm/errors.hpp"
#include "illuminorm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace illuminorm {

void ClassifierConfig::validate() const {
    if (widths.empty()) throw ConfigError("classifier needs at least one stage");
    if (epochs < 1 || batch_size < 1) throw ConfigError("classifier epochs and batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("classifier learning rate must be > 0");
    if (patience < 1) throw ConfigError("early-stopping patience must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation fraction must lie in (0, 1)");
}

std::pair<std::vector<int>, std::vector<int>> split_by_scene(const DatasetManifest& manifest, double validation_fraction,
                                                             Rng& rng) {
    std::vector<int> ids;
    for (const auto& s : manifest.scenes) ids.push_back(s.scene_id);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto held = static_cast<std::size_t>(std::lround(validation_fraction * ids.size()));
    if (held == 0 || held >= ids.size()) throw ContractError("too few scenes for a train/validation split");
    std::vector<int> validation(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(held));
    std::vector<int> training(ids.begin() + static_cast<std::ptrdiff_t>(held), ids.end());
    std::sort(validation.begin(), validation.end());
    std::sort(training.begin(), training.end());
    return {training, validation};
}

std::vector<Label> classifier_classes(const DatasetManifest& train) {
    if (!train.scenes.empty() && train.scenes.front().label.kind == Label::Kind::seats)
        return enumerate_seat_labels(train.meta.seat_count);
    std::set<Label> unique;
    for (const auto& s : train.scenes) unique.insert(s.label);
    return {unique.begin(), unique.end()};
}

ConvClassifier::ConvClassifier(int height, int width, int channels, const std::vector<int>& widths,
                               std::vector<Label> classes, std::uint64_t seed)
    : classes_(std::move(classes)) {
    const int factor = 1 << widths.size();
    if (height % factor || width % factor) throw ConfigError("classifier input not divisible by 2^stages");
    std::mt19937_64 rng(seed);
    int in = channels;
    for (std::size_t s = 0; s < widths.size(); ++s) {
        net_.add(std::make_unique<nn::Conv3x3>("classifier.stage" + std::to_string(s) + ".conv", in, widths[s],
                                               std::sqrt(2.0), rng));
        net_.add(std::make_unique<nn::Relu>());
        net_.add(std::make_unique<nn::MaxPool2>());
        in = widths[s];
    }
    const int features = in * (height / factor) * (width / factor);
    net_.add(std::make_unique<nn::Linear>("classifier.logits", features, static_cast<int>(classes_.size()), 1.0, rng));
}

std::vector<Label> ConvClassifier::predict(const std::vector<const Image*>& images) const {
    constexpr std::size_t kChunk = 64;
    std::vector<Label> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        std::vector<const Image*> chunk(images.begin() + start, images.begin() + std::min(images.size(), start + kChunk));
        const nn::Tensor logits = net_.forward(to_tensor(chunk), nullptr);
        const int k = logits.c;
        for (int i = 0; i < logits.n; ++i) {
            const float* row = logits.sample(i);
            out.push_back(classes_[static_cast<std::size_t>(std::max_element(row, row + k) - row)]);
        }
    }
    return out;
}

double ConvClassifier::train_step(const std::vector<const Image*>& images, const std::vector<int>& targets,
                                  nn::Adam& optimizer) {
    nn::Sequential::Cache cache;
    const nn::Tensor logits = net_.forward(to_tensor(images), &cache);
    const int n = logits.n, k = logits.c;
    nn::Tensor d_logits(n, k, 1, 1);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.sample(i);
        const double peak = *std::max_element(row, row + k);
        double norm = 0.0;
        for (int c = 0; c < k; ++c) norm += std::exp(row[c] - peak);
        loss += std::log(norm) + peak - row[targets[i]];
        float* g = d_logits.sample(i);
        for (int c = 0; c < k; ++c)
            g[c] = static_cast<float>((std::exp(row[c] - peak) / norm - (c == targets[i] ? 1.0 : 0.0)) / n);
    }
    auto params = net_.parameters();
    nn::Gradients grads = nn::zero_gradients(std::as_const(net_).parameters());
    net_.backward(d_logits, cache, grads);
    optimizer.step(params, grads);
    return loss / n;
}

std::vector<std::vector<float>> ConvClassifier::snapshot() const {
    std::vector<std::vector<float>> w;
    for (const auto* p : net_.parameters()) w.push_back(p->value);
    return w;
}

void ConvClassifier::restore(const std::vector<std::vector<float>>& weights) {
    auto params = net_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = weights.at(i);
}

namespace {

double accuracy_on(const ConvClassifier& model, const DatasetManifest& manifest, const std::vector<int>& scene_ids) {
    std::vector<const Image*> images;
    std::vector<const Label*> truth;
    for (int id : scene_ids) {
        const auto& scene = manifest.scene(id);
        for (const auto& v : scene.variants) {
            images.push_back(&v);
            truth.push_back(&scene.label);
        }
    }
    if (images.empty()) return 0.0;
    const auto predicted = model.predict(images);
    int correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == *truth[i];
    return static_cast<double>(correct) / predicted.size();
}

std::vector<int> all_ids(const DatasetManifest& m) {
    std::vector<int> ids;
    for (const auto& s : m.scenes) ids.push_back(s.scene_id);
    return ids;
}

// One epoch over the given scenes with one random variant each.
void run_epoch(ConvClassifier& model, const DatasetManifest& manifest, std::vector<int> ids,
               const std::vector<Label>& classes, int batch_size, nn::Adam& optimizer, Rng& rng) {
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t first = 0; first < ids.size(); first += batch_size) {
        std::vector<const Image*> images;
        std::vector<int> targets;
        for (std::size_t k = first; k < std::min(ids.size(), first + batch_size); ++k) {
            const auto& scene = manifest.scene(ids[k]);
            std::uniform_int_distribution<int> pick(0, scene.variant_count() - 1);
            images.push_back(&scene.variants[pick(rng)]);
            const auto it = std::lower_bound(classes.begin(), classes.end(), scene.label);
            if (it == classes.end() || *it != scene.label)
                throw ContractError("label " + scene.label.to_string() + " not in the classifier's class list");
            targets.push_back(static_cast<int>(it - classes.begin()));
        }
        model.train_step(images, targets, optimizer);
    }
}

Rng seeded(std::uint64_t seed, std::uint32_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
    return Rng(seq);
}

}  // namespace

ClassifierResult train_baseline_classifier(const DatasetManifest& train, const DatasetManifest& test,
                                           const ClassifierConfig& config, std::uint64_t seed) {
    config.validate();
    const auto classes = classifier_classes(train);
    const auto& meta = train.meta;
    ClassifierResult result;

    {
        ConvClassifier model(meta.height, meta.width, meta.channels, config.widths, classes, seed);
        nn::Adam optimizer(config.learning_rate);
        Rng rng = seeded(seed, 11);
        for (int epoch = 0; epoch < config.epochs; ++epoch)
            run_epoch(model, train, all_ids(train), classes, config.batch_size, optimizer, rng);
        result.accuracy_no_stopping = accuracy_on(model, test, all_ids(test));
        result.train_accuracy = accuracy_on(model, train, all_ids(train));
    }

    {
        ConvClassifier model(meta.height, meta.width, meta.channels, config.widths, classes, seed);
        nn::Adam optimizer(config.learning_rate);
        Rng rng = seeded(seed, 12);
        const auto [fit_ids, val_ids] = split_by_scene(train, config.validation_fraction, rng);
        double best = -1.0;
        auto best_weights = model.snapshot();
        int since_best = 0;
        for (int epoch = 1; epoch <= config.epochs; ++epoch) {
            run_epoch(model, train, fit_ids, classes, config.batch_size, optimizer, rng);
            const double val = accuracy_on(model, train, val_ids);
            result.stopped_epoch = epoch;
            if (val > best) {
                best = val;
                best_weights = model.snapshot();
                result.best_epoch = epoch;
                since_best = 0;
            } else if (++since_best >= config.patience) {
                break;
            }
        }
        model.restore(best_weights);
        result.accuracy_early_stopping = accuracy_on(model, test, all_ids(test));
    }
    return result;
}

std::vector<ClassifierResult> baseline_classifier(const DatasetManifest& train, const DatasetManifest& test,
                                                  const ClassifierConfig& config,
                                                  const std::vector<std::uint64_t>& seeds) {
    std::vector<ClassifierResult> out;
    for (auto seed : seeds) out.push_back(train_baseline_classifier(train, test, config, seed));
    return out;
}

}  // namespace illuminorm
