#pragma once

#include "illuminorm/classifier.hpp"
#include "illuminorm/dataset.hpp"
#include "illuminorm/latent_index.hpp"
#include "illuminorm/model.hpp"
#include "illuminorm/ssim.hpp"
#include "illuminorm/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace illuminorm {

/// counts[truth][predicted]
struct Confusion {
    std::map<Label, std::map<Label, int>> counts;

    int row_total(const Label& truth) const;
    nlohmann::json to_json() const;
};

struct AccuracyResult {
    double accuracy = 0.0;        // per image
    double scene_accuracy = 0.0;  // majority vote over each scene's variants
    int correct = 0;
    int total = 0;
    Confusion confusion;
};

/// Nearest-neighbour label of every test image compared with its full ground-truth label.
/// Throws ContractError for an empty test set.
AccuracyResult classification_accuracy(const LatentIndex& index, const ImageCodec& codec, const DatasetManifest& test);

struct InvarianceScore {
    double recon_score = 0.0;  // mean pairwise SSIM between reconstructions of one scene
    double input_score = 0.0;  // same over the raw variants
};

/// Averages over scenes; each scene contributes the mean over its unordered variant pairs.
InvarianceScore invariance_score(const ImageCodec& codec, const DatasetManifest& manifest, const SsimConfig& ssim = {});

struct ReconExtremes {
    Image first_recon;
    Image max_divergent_recon;
    int max_divergent_variant = 0;
    double max_divergent_ssim = 1.0;
    Image closest_input;
    int closest_variant = 0;
    double closest_ssim = 0.0;
    Image furthest_input;
    int furthest_variant = 0;
    double furthest_ssim = 0.0;
};

/// Reconstructs every variant and compares against the first variant's reconstruction.
/// Ties resolve to the lowest variant index.
ReconExtremes recon_extremes(const ImageCodec& codec, const SceneRecord& scene, const SsimConfig& ssim = {});

enum class Projection { none, pca2 };
Projection parse_projection(std::string_view text);

struct LatentRow {
    int scene_id = 0;
    int variant_id = 0;
    Label label;
    std::vector<double> coordinates;
};

struct LatentTable {
    std::vector<std::string> columns;
    std::vector<LatentRow> rows;
    std::vector<double> explained_variance;  // pca2 only: the two leading eigenvalues

    /// scene_id,variant_id,label,<columns...>
    void write_csv(const std::filesystem::path& path) const;
};

/// Top-2 principal-component coordinates of the rows (centred; each axis oriented so that its
/// largest-magnitude loading is positive). Throws ContractError if d < 2.
std::vector<std::vector<double>> pca2(const std::vector<std::vector<double>>& points,
                                      std::vector<double>* eigenvalues = nullptr);

/// projection none exports all raw coordinates; pca2 needs d >= 2.
LatentTable export_latents(const ImageCodec& codec, const DatasetManifest& manifest, Projection projection);

/// Fraction of sampled held-out triplets whose squared-distance margin is violated.
double triplet_violation_rate(const ImageCodec& codec, const DatasetManifest& manifest, const TripletPolicy& policy,
                              double margin, int samples, std::uint64_t seed);

/// One report row: an encoder-decoder variant with a loss mode, or the baseline classifier.
struct Setup {
    enum class Kind { encoder_decoder, classifier_no_stopping, classifier_early_stopping };

    std::string name;
    Kind kind = Kind::encoder_decoder;
    Variant variant = Variant::tae;
    LossMode loss = LossMode::impossible;

    /// ae, vae, tae (impossible loss), ae-v, vae-v, tae-v (vanilla loss), cnn-ns, cnn-es.
    static Setup parse(std::string_view token);
    static std::vector<Setup> parse_list(std::string_view comma_separated);
};

struct SetupRow {
    std::string name;
    std::vector<std::optional<double>> accuracy;        // per seed, nullopt = failed
    std::vector<std::optional<double>> scene_accuracy;  // per seed
    std::vector<std::string> errors;                    // per seed, empty on success
    std::vector<std::optional<InvarianceScore>> invariance;  // per seed, test split (encoder-decoders only)
    std::vector<std::string> fingerprints;              // per seed checkpoint fingerprint (encoder-decoders only)
    Confusion confusion;                                // summed over successful seeds
    double mean = 0.0;
    double variance = 0.0;  // population variance over successful seeds
    double stddev = 0.0;
    double scene_mean = 0.0;
    int failures = 0;
};

struct EvalReport {
    static constexpr int kSchemaVersion = 1;

    std::vector<std::uint64_t> seeds;
    std::vector<SetupRow> rows;
    nlohmann::json config;

    /// FNV-1a of the serialised config, so reports from different settings are told apart.
    std::string config_fingerprint() const;
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    /// Fixed-width text table, accuracies in percent and variance in percentage points squared.
    std::string to_table() const;
    const SetupRow* row(std::string_view name) const;
};

/// Fills mean, variance, stddev and scene_mean from the per-seed columns.
void summarize(SetupRow& row);

/// Seeds used when a sweep is asked for N seeds: 1..N.
std::vector<std::uint64_t> default_seeds(int count);

struct SweepHooks {
    std::function<void(const std::string& message)> progress;
    /// Called after each encoder-decoder training run (serialised when jobs > 1).
    std::function<void(const Setup&, std::uint64_t seed, const EncoderDecoder&, const TrainHistory&)> trained;
};

/// Trains and evaluates every setup for every seed. A failing run marks its cell failed.
/// Runs are independent, so jobs > 1 only changes wall time, never the report.
EvalReport multi_seed_report(const ArchConfig& arch, const TrainConfig& train_config,
                             const ClassifierConfig& classifier_config, const std::vector<std::uint64_t>& seeds,
                             const DatasetManifest& train, const DatasetManifest& test,
                             const std::vector<Setup>& setups, const SweepHooks& hooks = {}, int jobs = 1);

}  // namespace illuminorm
