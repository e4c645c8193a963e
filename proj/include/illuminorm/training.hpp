#pragma once

#include "illuminorm/dataset.hpp"
#include "illuminorm/model.hpp"
#include "illuminorm/ssim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace illuminorm {

/// impossible: target is another variant of the input's scene; vanilla: target is the input.
enum class LossMode { impossible, vanilla };
std::string_view to_string(LossMode mode);
LossMode parse_loss_mode(std::string_view text);

struct TrainConfig {
    int batch_size = 16;
    int epochs = 60;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double margin = 1.0;      // triplet alpha
    double kl_weight = 0.001; // VAE beta
    std::uint64_t seed = 1;
    LossMode loss = LossMode::impossible;
    std::string policy = "seat";
    std::string augment_mode = "none";  // none | both | reverse_denoise
    std::string augment_spec;
    SsimConfig ssim;

    /// Throws ConfigError: batch >= 1, epochs >= 0, lr > 0, margin >= 0, beta >= 0.
    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Input image and its reconstruction target.
struct ImagePair {
    const Image* input = nullptr;
    const Image* target = nullptr;
};

/// One scene of a batch: its pair plus, for a triplet model, the positive and negative pairs.
struct BatchItem {
    ImagePair anchor;
    std::optional<ImagePair> positive;
    std::optional<ImagePair> negative;

    bool has_triplet() const { return positive && negative; }
};

struct LossBreakdown {
    double recon = 0.0;
    double triplet = 0.0;
    double kl = 0.0;  // unweighted
    double total = 0.0;

    LossBreakdown& operator+=(const LossBreakdown& o);
};

/// Sum over the batch of r(reconstruct(input), target); vanilla mode uses the input as target.
double loss_recon_pair(const ImageCodec& model, std::span<const ImagePair> batch, const SsimMetric& metric,
                       LossMode mode = LossMode::impossible);

/// max(0, |a-p|^2 - |a-n|^2 + alpha) for one triplet of codes.
double triplet_hinge(std::span<const float> anchor, std::span<const float> positive, std::span<const float> negative,
                     double alpha);

/// Hinge summed over the batch. Throws ContractError on length mismatches.
double loss_triplet(const std::vector<std::vector<float>>& anchors, const std::vector<std::vector<float>>& positives,
                    const std::vector<std::vector<float>>& negatives, double alpha);

/// Sum of the pair loss over anchor, positive and negative of every triplet item.
double loss_recon_triplet(const ImageCodec& model, std::span<const BatchItem> batch, const SsimMetric& metric,
                          LossMode mode = LossMode::impossible);

/// Loss of one batch: TAE = L_R + L_T, AE = L_R, VAE = L_R + beta * KL. When grads is non-null the
/// gradient of the total is accumulated into it. VAE noise is drawn from noise (eps = 0 if null).
///
/// Throws ContractError if an AE/VAE batch carries triplet members.
LossBreakdown batch_loss(const EncoderDecoder& model, std::span<const BatchItem> batch, const TrainConfig& config,
                         const SsimMetric& metric, Rng* noise, nn::Gradients* grads);

/// batch_loss without gradients.
LossBreakdown total_loss(const EncoderDecoder& model, std::span<const BatchItem> batch, const TrainConfig& config,
                         Rng* noise = nullptr);

struct StepRecord {
    int epoch = 0;
    int step = 0;
    LossBreakdown loss;
};

struct EpochRecord {
    int epoch = 0;
    LossBreakdown loss;  // summed over the epoch's steps
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;

    /// epoch,recon,triplet,kl,total (wall time is left out so reruns compare byte for byte)
    void write_csv(const std::filesystem::path& path) const;
    /// epoch,step,recon,triplet,kl,total
    void write_steps_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Iterates over scenes (one anchor per scene per epoch), drawing a fresh pair (and triplet for
/// a TAE) each time. Scenes that cannot anchor a triplet contribute their pair term only.
///
/// Throws NumericError with the epoch, step and component losses if a loss becomes non-finite.
TrainResult train(const DatasetManifest& manifest, const ArchConfig& arch, const TrainConfig& config,
                  const EpochObserver& observer = {});

/// Trains from an already-initialised model (used by tests that inspect intermediate state).
TrainHistory train_model(EncoderDecoder& model, const DatasetManifest& manifest, const TrainConfig& config,
                         const EpochObserver& observer = {});

}  // namespace illuminorm
