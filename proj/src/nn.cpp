#include "illuminorm/nn.hpp"

#include "illuminorm/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace illuminorm::nn {

namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using ConstVec = Eigen::Map<const Eigen::VectorXf>;
using Vec = Eigen::Map<Eigen::VectorXf>;

std::vector<float> normal_init(std::size_t count, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<float> v(count);
    for (float& x : v) x = static_cast<float>(dist(rng));
    return v;
}

// Rows are (ci, ky, kx), columns are output pixels; zero padding of 1.
void im2col(const float* x, int channels, int h, int w, float* cols) {
    const int hw = h * w;
    for (int ci = 0; ci < channels; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                float* row = cols + ((ci * 3 + ky) * 3 + kx) * static_cast<std::size_t>(hw);
                const float* plane = x + ci * static_cast<std::size_t>(hw);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    float* dst = row + y * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, 0.0f);
                        continue;
                    }
                    const float* src = plane + sy * w;
                    const int shift = kx - 1;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + shift;
                        dst[xx] = (sx >= 0 && sx < w) ? src[sx] : 0.0f;
                    }
                }
            }
}

void col2im(const float* cols, int channels, int h, int w, float* dx) {
    const int hw = h * w;
    std::fill(dx, dx + static_cast<std::size_t>(channels) * hw, 0.0f);
    for (int ci = 0; ci < channels; ++ci)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const float* row = cols + ((ci * 3 + ky) * 3 + kx) * static_cast<std::size_t>(hw);
                float* plane = dx + ci * static_cast<std::size_t>(hw);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const float* src = row + y * w;
                    float* dst = plane + sy * w;
                    const int shift = kx - 1;
                    for (int xx = 0; xx < w; ++xx) {
                        const int sx = xx + shift;
                        if (sx >= 0 && sx < w) dst[sx] += src[xx];
                    }
                }
            }
}

}  // namespace

Conv3x3::Conv3x3(std::string name, int in_channels, int out_channels, double init_gain, std::mt19937_64& rng)
    : in_(in_channels), out_(out_channels) {
    const std::size_t fan_in = static_cast<std::size_t>(in_channels) * 9;
    params_.push_back({name + ".weight", {out_channels, in_channels, 3, 3},
                       normal_init(fan_in * out_channels, init_gain / std::sqrt(double(fan_in)), rng)});
    params_.push_back({name + ".bias", {out_channels}, std::vector<float>(out_channels, 0.0f)});
}

std::string Conv3x3::describe() const { return "conv3x3(" + std::to_string(in_) + "->" + std::to_string(out_) + ")"; }

Tensor Conv3x3::forward(const Tensor& x, LayerCache* cache) const {
    if (x.c != in_) throw ContractError("conv input has " + std::to_string(x.c) + " channels, expected " + std::to_string(in_));
    const int hw = x.h * x.w, k = in_ * 9;
    Tensor y(x.n, out_, x.h, x.w);
    std::vector<float> cols(static_cast<std::size_t>(k) * hw);
    ConstMapRM weight(params_[0].value.data(), out_, k);
    ConstVec bias(params_[1].value.data(), out_);
    for (int b = 0; b < x.n; ++b) {
        im2col(x.sample(b), in_, x.h, x.w, cols.data());
        MapRM out(y.sample(b), out_, hw);
        out.noalias() = weight * ConstMapRM(cols.data(), k, hw);
        out.colwise() += bias;
    }
    if (cache) cache->assign({x});
    return y;
}

Tensor Conv3x3::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const {
    const Tensor& x = cache.at(0);
    const int hw = x.h * x.w, k = in_ * 9;
    Tensor dx(x.n, x.c, x.h, x.w);
    std::vector<float> cols(static_cast<std::size_t>(k) * hw), dcols(cols.size());
    ConstMapRM weight(params_[0].value.data(), out_, k);
    MapRM dweight(grads[0].data(), out_, k);
    Vec dbias(grads[1].data(), out_);
    for (int b = 0; b < x.n; ++b) {
        im2col(x.sample(b), in_, x.h, x.w, cols.data());
        ConstMapRM g(dy.sample(b), out_, hw);
        dweight.noalias() += g * ConstMapRM(cols.data(), k, hw).transpose();
        // Plain loops: Eigen's vectorised reductions peel by alignment, which varies between runs.
        for (int o = 0; o < out_; ++o) {
            float sum = 0.0f;
            for (int i = 0; i < hw; ++i) sum += g(o, i);
            dbias[o] += sum;
        }
        MapRM(dcols.data(), k, hw).noalias() = weight.transpose() * g;
        col2im(dcols.data(), in_, x.h, x.w, dx.sample(b));
    }
    return dx;
}

Linear::Linear(std::string name, int in_features, int out_features, double init_gain, std::mt19937_64& rng)
    : in_(in_features), out_(out_features) {
    params_.push_back({name + ".weight", {out_features, in_features},
                       normal_init(static_cast<std::size_t>(in_features) * out_features,
                                   init_gain / std::sqrt(double(in_features)), rng)});
    params_.push_back({name + ".bias", {out_features}, std::vector<float>(out_features, 0.0f)});
}

std::string Linear::describe() const { return "linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")"; }

Tensor Linear::forward(const Tensor& x, LayerCache* cache) const {
    if (static_cast<int>(x.sample_size()) != in_)
        throw ContractError("linear input has " + std::to_string(x.sample_size()) + " features, expected " +
                            std::to_string(in_));
    Tensor y(x.n, out_, 1, 1);
    // Per-sample dot products so an embedding does not depend on its batch.
    for (int b = 0; b < x.n; ++b) {
        const float* in = x.sample(b);
        for (int o = 0; o < out_; ++o) {
            const float* w = params_[0].value.data() + static_cast<std::size_t>(o) * in_;
            float sum = 0.0f;
            for (int i = 0; i < in_; ++i) sum += w[i] * in[i];
            y.data[static_cast<std::size_t>(b) * out_ + o] = sum + params_[1].value[o];
        }
    }
    if (cache) cache->assign({x});
    return y;
}

Tensor Linear::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>> grads) const {
    const Tensor& x = cache.at(0);
    ConstMapRM input(x.data.data(), x.n, in_);
    ConstMapRM g(dy.data.data(), x.n, out_);
    MapRM(grads[0].data(), out_, in_).noalias() += g.transpose() * input;
    for (int o = 0; o < out_; ++o) {
        float sum = 0.0f;
        for (int b = 0; b < x.n; ++b) sum += g(b, o);
        grads[1][o] += sum;
    }
    Tensor dx(x.n, x.c, x.h, x.w);
    MapRM(dx.data.data(), x.n, in_).noalias() = g * ConstMapRM(params_[0].value.data(), out_, in_);
    return dx;
}

Tensor Relu::forward(const Tensor& x, LayerCache* cache) const {
    Tensor y = x;
    for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
    if (cache) cache->assign({y});
    return y;
}

Tensor Relu::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>>) const {
    const Tensor& y = cache.at(0);
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(y.data[i] > 0.0f)) dx.data[i] = 0.0f;
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x, LayerCache* cache) const {
    Tensor y = x;
    for (float& v : y.data) v = 1.0f / (1.0f + std::exp(-v));
    if (cache) cache->assign({y});
    return y;
}

Tensor Sigmoid::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>>) const {
    const Tensor& y = cache.at(0);
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= y.data[i] * (1.0f - y.data[i]);
    return dx;
}

Tensor MaxPool2::forward(const Tensor& x, LayerCache* cache) const {
    if (x.h % 2 || x.w % 2) throw ContractError("maxpool2 needs even spatial dimensions");
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor y(x.n, x.c, oh, ow);
    for (int p = 0; p < x.n * x.c; ++p) {
        const float* in = x.data.data() + static_cast<std::size_t>(p) * x.h * x.w;
        float* out = y.data.data() + static_cast<std::size_t>(p) * oh * ow;
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                const float* r0 = in + (2 * yy) * x.w + 2 * xx;
                const float* r1 = r0 + x.w;
                out[yy * ow + xx] = std::max(std::max(r0[0], r0[1]), std::max(r1[0], r1[1]));
            }
    }
    if (cache) cache->assign({x});
    return y;
}

Tensor MaxPool2::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>>) const {
    const Tensor& x = cache.at(0);
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor dx(x.n, x.c, x.h, x.w);
    for (int p = 0; p < x.n * x.c; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * x.h * x.w;
        const float* in = x.data.data() + base;
        float* out = dx.data.data() + base;
        const float* g = dy.data.data() + static_cast<std::size_t>(p) * oh * ow;
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                // First maximum in raster order receives the gradient.
                const int offsets[4] = {(2 * yy) * x.w + 2 * xx, (2 * yy) * x.w + 2 * xx + 1,
                                        (2 * yy + 1) * x.w + 2 * xx, (2 * yy + 1) * x.w + 2 * xx + 1};
                int best = offsets[0];
                for (int o : offsets)
                    if (in[o] > in[best]) best = o;
                out[best] += g[yy * ow + xx];
            }
    }
    return dx;
}

Tensor Upsample2::forward(const Tensor& x, LayerCache* cache) const {
    Tensor y(x.n, x.c, x.h * 2, x.w * 2);
    for (int p = 0; p < x.n * x.c; ++p) {
        const float* in = x.data.data() + static_cast<std::size_t>(p) * x.h * x.w;
        float* out = y.data.data() + static_cast<std::size_t>(p) * y.h * y.w;
        for (int yy = 0; yy < y.h; ++yy)
            for (int xx = 0; xx < y.w; ++xx) out[yy * y.w + xx] = in[(yy / 2) * x.w + xx / 2];
    }
    if (cache) cache->assign({Tensor(x.n, x.c, x.h, x.w, 0.0f)});
    return y;
}

Tensor Upsample2::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>>) const {
    const Tensor& shape = cache.at(0);
    Tensor dx(shape.n, shape.c, shape.h, shape.w);
    for (int p = 0; p < dx.n * dx.c; ++p) {
        const float* g = dy.data.data() + static_cast<std::size_t>(p) * dy.h * dy.w;
        float* out = dx.data.data() + static_cast<std::size_t>(p) * dx.h * dx.w;
        for (int yy = 0; yy < dy.h; ++yy)
            for (int xx = 0; xx < dy.w; ++xx) out[(yy / 2) * dx.w + xx / 2] += g[yy * dy.w + xx];
    }
    return dx;
}

std::string Reshape::describe() const {
    return "reshape(" + std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_) + ")";
}

Tensor Reshape::forward(const Tensor& x, LayerCache* cache) const {
    if (x.sample_size() != static_cast<std::size_t>(c_) * h_ * w_) throw ContractError("reshape size mismatch");
    Tensor y = x;
    y.c = c_;
    y.h = h_;
    y.w = w_;
    if (cache) cache->assign({Tensor(0, x.c, x.h, x.w)});
    return y;
}

Tensor Reshape::backward(const Tensor& dy, const LayerCache& cache, std::span<std::vector<float>>) const {
    Tensor dx = dy;
    dx.c = cache.at(0).c;
    dx.h = cache.at(0).h;
    dx.w = cache.at(0).w;
    return dx;
}

void Sequential::add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

Tensor Sequential::forward(const Tensor& x, Cache* cache) const {
    if (cache) cache->layers.assign(layers_.size(), {});
    Tensor current = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        current = layers_[i]->forward(current, cache ? &cache->layers[i] : nullptr);
    return current;
}

Tensor Sequential::backward(const Tensor& dy, const Cache& cache, std::span<std::vector<float>> grads) const {
    std::vector<std::size_t> offsets(layers_.size() + 1, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) offsets[i + 1] = offsets[i] + layers_[i]->parameters().size();
    Tensor g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;)
        g = layers_[i]->backward(g, cache.layers.at(i), grads.subspan(offsets[i], offsets[i + 1] - offsets[i]));
    return g;
}

std::vector<Parameter*> Sequential::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
        for (auto& p : l->parameters()) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> Sequential::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& l : layers_)
        for (const auto& p : std::as_const(*l).parameters()) out.push_back(&p);
    return out;
}

std::size_t Sequential::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += std::as_const(*l).parameters().size();
    return n;
}

Gradients zero_gradients(const std::vector<const Parameter*>& params) {
    Gradients g;
    g.reserve(params.size());
    for (const auto* p : params) g.emplace_back(p->value.size(), 0.0f);
    return g;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Parameter*>& params, const Gradients& grads) {
    if (params.size() != grads.size()) throw ContractError("optimizer parameter/gradient count mismatch");
    if (m_.empty()) {
        for (const auto* p : params) {
            m_.emplace_back(p->value.size(), 0.0f);
            v_.emplace_back(p->value.size(), 0.0f);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    const float step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
    const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const float eps_hat = static_cast<float>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i]->value;
        const auto& g = grads[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            m[j] = b1 * m[j] + (1.0f - b1) * g[j];
            v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
            value[j] -= step * m[j] / (std::sqrt(v[j]) + eps_hat);
        }
    }
}

}  // namespace illuminorm::nn
