#pragma once

#include "illuminorm/dataset.hpp"
#include "illuminorm/image.hpp"
#include "illuminorm/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace illuminorm {

enum class Variant { ae, vae, tae };
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

/// VGG-style ladder: each stage is conv3x3 + ReLU + 2x2 max-pool; the decoder mirrors it with
/// nearest-neighbour upsampling followed by conv3x3 and ends in a sigmoid.
struct ArchConfig {
    int height = 64;
    int width = 64;
    int channels = 1;
    std::vector<int> widths{16, 32, 64, 128};
    int latent_dim = 16;
    Variant variant = Variant::tae;

    /// Throws ConfigError unless H and W are divisible by 2^stages, latent_dim >= 1, widths > 0.
    void validate() const;
    int stages() const { return static_cast<int>(widths.size()); }
    int bottleneck_height() const { return height >> stages(); }
    int bottleneck_width() const { return width >> stages(); }

    nlohmann::json to_json() const;
    static ArchConfig from_json(const nlohmann::json& j);
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// z for AE/TAE; VAE additionally carries mu and log sigma^2 (z = mu + sigma * eps).
struct LatentCode {
    std::vector<float> z;
    std::vector<float> mu;
    std::vector<float> logvar;

    bool variational() const { return !mu.empty(); }
};

/// KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1).
/// Throws ContractError for a non-variational code.
double kl_divergence(const LatentCode& code);

/// What retrieval and evaluation need from an encoder-decoder.
class ImageCodec {
public:
    virtual ~ImageCodec() = default;
    virtual int latent_dim() const = 0;
    /// Deterministic embedding used for retrieval (mu for a VAE).
    virtual std::vector<float> embed(const Image& x) const = 0;
    virtual Image decode(std::span<const float> z) const = 0;
    virtual Image reconstruct(const Image& x) const;
    virtual std::vector<std::vector<float>> embed_batch(const std::vector<const Image*>& xs) const;
    virtual std::vector<Image> reconstruct_batch(const std::vector<const Image*>& xs) const;
    virtual std::string fingerprint() const { return {}; }
};

/// Conversions between double images and float NCHW batches.
nn::Tensor to_tensor(const std::vector<const Image*>& images);
Image image_from_tensor(const nn::Tensor& t, int index);

class EncoderDecoder final : public ImageCodec {
public:
    EncoderDecoder(ArchConfig arch, std::uint64_t init_seed);

    const ArchConfig& arch() const { return arch_; }
    Variant variant() const { return arch_.variant; }
    int latent_dim() const override { return arch_.latent_dim; }

    /// For a VAE, noise == nullptr means eps = 0 (z = mu).
    LatentCode encode(const Image& x, Rng* noise = nullptr) const;
    /// Explicit reparameterisation noise; eps must have latent_dim entries.
    LatentCode encode(const Image& x, std::span<const float> eps) const;
    Image decode(std::span<const float> z) const override;
    Image decode(const LatentCode& code) const { return decode(code.z); }

    std::vector<float> embed(const Image& x) const override;
    std::vector<std::vector<float>> embed_batch(const std::vector<const Image*>& xs) const override;
    std::vector<Image> reconstruct_batch(const std::vector<const Image*>& xs) const override;
    std::string fingerprint() const override;

    /// Forward state of one training batch.
    struct BatchPass {
        nn::Tensor input;
        nn::Sequential::Cache encoder_cache;
        nn::Sequential::Cache decoder_cache;
        nn::Tensor head;    // (n, d) or (n, 2d) = [mu | logvar]
        nn::Tensor eps;     // (n, d), VAE only
        nn::Tensor z;       // (n, d)
        nn::Tensor output;  // (n, C, H, W)
    };

    /// noise == nullptr draws eps = 0 for a VAE.
    BatchPass forward(const std::vector<const Image*>& xs, Rng* noise) const;

    /// Backpropagates dL/d output plus optional dL/dz (n x d) and, for a VAE, dL/d head
    /// (n x 2d, e.g. from the KL term). Gradients are accumulated into grads.
    void backward(const BatchPass& pass, const nn::Tensor& d_output, const nn::Tensor* d_z, const nn::Tensor* d_head,
                  nn::Gradients& grads) const;

    std::vector<nn::Parameter*> parameters();
    std::vector<const nn::Parameter*> parameters() const;
    nn::Gradients zero_gradients() const { return nn::zero_gradients(parameters()); }
    std::size_t weight_count() const;

    /// Human-readable layer list.
    std::vector<std::string> describe() const;

private:
    LatentCode code_from_head(const float* head, const float* eps) const;

    ArchConfig arch_;
    nn::Sequential encoder_;
    nn::Sequential decoder_;
};

/// Versioned checkpoint: architecture, weights, training metadata and seed.
struct Checkpoint {
    static constexpr int kVersion = 1;

    ArchConfig arch;
    std::uint64_t seed = 0;
    nlohmann::json training;  // effective training configuration and summary
    std::vector<std::vector<float>> weights;
    std::vector<std::string> names;

    /// Weights copied out of a model.
    static Checkpoint capture(const EncoderDecoder& model, std::uint64_t seed, nlohmann::json training);
    EncoderDecoder instantiate() const;
    std::string fingerprint() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError on a malformed or corrupted file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::span<const unsigned char> bytes, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace illuminorm
