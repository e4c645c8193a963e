#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace illuminorm::nn {

/// Dense float tensor in NCHW order.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    float* sample(int i) { return data.data() + i * sample_size(); }
    const float* sample(int i) const { return data.data() + i * sample_size(); }
    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<float> value;
};

/// Per-layer forward state needed by backward.
using LayerCache = std::vector<Tensor>;

/// Stateless with respect to activations: forward/backward are const and keep state in caches,
/// so a trained network can serve concurrent inference.
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string describe() const = 0;
    /// cache may be null for inference.
    virtual Tensor forward(const Tensor& x, LayerCache* cache) const = 0;
    /// Accumulates parameter gradients into grads (one entry per parameter) and returns dL/dx.
    virtual Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const = 0;
    virtual std::span<Parameter> parameters() { return {}; }
    virtual std::span<const Parameter> parameters() const { return {}; }
};

/// 3x3 convolution, stride 1, zero padding 1.
class Conv3x3 final : public Layer {
public:
    Conv3x3(std::string name, int in_channels, int out_channels, double init_gain, std::mt19937_64& rng);
    std::string describe() const override;
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;
    std::span<Parameter> parameters() override { return params_; }
    std::span<const Parameter> parameters() const override { return params_; }

private:
    int in_ = 0, out_ = 0;
    std::vector<Parameter> params_;  // weight [out, in*9], bias [out]
};

class Linear final : public Layer {
public:
    Linear(std::string name, int in_features, int out_features, double init_gain, std::mt19937_64& rng);
    std::string describe() const override;
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;
    std::span<Parameter> parameters() override { return params_; }
    std::span<const Parameter> parameters() const override { return params_; }

private:
    int in_ = 0, out_ = 0;
    std::vector<Parameter> params_;  // weight [out, in], bias [out]
};

class Relu final : public Layer {
public:
    std::string describe() const override { return "relu"; }
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;
};

class Sigmoid final : public Layer {
public:
    std::string describe() const override { return "sigmoid"; }
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;
};

/// 2x2 max pooling with stride 2.
class MaxPool2 final : public Layer {
public:
    std::string describe() const override { return "maxpool2"; }
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;
};

/// Nearest-neighbour upsampling by 2.
class Upsample2 final : public Layer {
public:
    std::string describe() const override { return "upsample2"; }
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;
};

/// Reinterprets each sample as (c, h, w); sample size must match.
class Reshape final : public Layer {
public:
    Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
    std::string describe() const override;
    Tensor forward(const Tensor& x, LayerCache* cache) const override;
    Tensor backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const override;

private:
    int c_, h_, w_;
};

/// Flat gradient storage matching a parameter list.
using Gradients = std::vector<std::vector<float>>;

class Sequential {
public:
    struct Cache {
        std::vector<LayerCache> layers;
    };

    Sequential() = default;
    Sequential(const Sequential&) = delete;
    Sequential& operator=(const Sequential&) = delete;
    Sequential(Sequential&&) = default;
    Sequential& operator=(Sequential&&) = default;

    void add(std::unique_ptr<Layer> layer);
    std::size_t size() const { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

    Tensor forward(const Tensor& x, Cache* cache) const;
    /// grads must hold parameter_count() entries in parameter order.
    Tensor backward(const Tensor& dy, const Cache& cache, std::span<std::vector<float>> grads) const;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    std::size_t parameter_count() const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Zero-initialised gradient buffers for a parameter list.
Gradients zero_gradients(const std::vector<const Parameter*>& params);

/// Adaptive-moment optimiser with bias correction.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(const std::vector<Parameter*>& params, const Gradients& grads);
    long steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

}  // namespace illuminorm::nn
