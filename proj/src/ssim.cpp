#include "illuminorm/ssim.hpp"

#include "illuminorm/errors.hpp"

#include <cmath>
#include <string>

namespace illuminorm {

void SsimConfig::validate() const {
    if (window_size < 3 || window_size % 2 == 0)
        throw ConfigError("SSIM window_size must be odd and >= 3, got " + std::to_string(window_size));
    if (!(sigma > 0.0)) throw ConfigError("SSIM sigma must be positive");
    if (!(k1 > 0.0 && k1 < 1.0) || !(k2 > 0.0 && k2 < 1.0))
        throw ConfigError("SSIM k1 and k2 must lie in (0, 1)");
    if (!(dynamic_range > 0.0)) throw ConfigError("SSIM dynamic range must be positive");
}

namespace {

std::vector<double> gaussian_1d(const SsimConfig& config) {
    std::vector<double> g(config.window_size);
    const double centre = (config.window_size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < config.window_size; ++i) {
        const double d = i - centre;
        g[i] = std::exp(-d * d / (2.0 * config.sigma * config.sigma));
        total += g[i];
    }
    for (double& v : g) v /= total;
    return g;
}

// Valid-region separable filtering of one H x W plane into (H-k+1) x (W-k+1).
void filter_valid(const double* in, int h, int w, const std::vector<double>& g, std::vector<double>& tmp,
                  double* out) {
    const int k = static_cast<int>(g.size());
    const int ow = w - k + 1, oh = h - k + 1;
    tmp.assign(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < k; ++i) s += g[i] * in[y * w + x + i];
            tmp[y * ow + x] = s;
        }
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int j = 0; j < k; ++j) s += g[j] * tmp[(y + j) * ow + x];
            out[y * ow + x] = s;
        }
}

// Adjoint of filter_valid: scatters an (H-k+1) x (W-k+1) map back onto H x W.
void filter_valid_adjoint(const double* in, int h, int w, const std::vector<double>& g,
                          std::vector<double>& tmp, double* out) {
    const int k = static_cast<int>(g.size());
    const int ow = w - k + 1, oh = h - k + 1;
    tmp.assign(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = in[y * ow + x];
            for (int j = 0; j < k; ++j) tmp[(y + j) * ow + x] += g[j] * v;
        }
    for (int i = 0; i < h * w; ++i) out[i] = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[y * ow + x];
            for (int i = 0; i < k; ++i) out[y * w + x + i] += g[i] * v;
        }
}

}  // namespace

std::vector<double> gaussian_window(const SsimConfig& config) {
    config.validate();
    const auto g = gaussian_1d(config);
    const int k = config.window_size;
    std::vector<double> window(static_cast<std::size_t>(k) * k);
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) window[y * k + x] = g[y] * g[x];
    return window;
}

SsimMetric::SsimMetric(SsimConfig config) : config_(config) {
    config_.validate();
    kernel_1d_ = gaussian_1d(config_);
}

double SsimMetric::evaluate(const Image& a, const Image& b, Image* grad_a) const {
    if (!a.same_shape(b)) throw ContractError("SSIM inputs differ in shape");
    const int k = config_.window_size;
    const int h = a.height(), w = a.width();
    if (h < k || w < k || a.channels() < 1)
        throw ContractError("image of " + std::to_string(h) + "x" + std::to_string(w) +
                            " is smaller than the SSIM window " + std::to_string(k));

    const int oh = h - k + 1, ow = w - k + 1;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    const double c1 = config_.c1(), c2 = config_.c2();
    const double scale = 1.0 / (static_cast<double>(out_plane) * a.channels());

    if (grad_a) *grad_a = Image(h, w, a.channels());

    std::vector<double> tmp;
    std::vector<double> sq_a(plane), sq_b(plane), prod(plane);
    std::vector<double> mu_a(out_plane), mu_b(out_plane), e_aa(out_plane), e_bb(out_plane), e_ab(out_plane);
    std::vector<double> g_mu, g_aa, g_ab, back;
    if (grad_a) {
        g_mu.resize(out_plane);
        g_aa.resize(out_plane);
        g_ab.resize(out_plane);
        back.resize(plane);
    }

    double total = 0.0;
    for (int c = 0; c < a.channels(); ++c) {
        const double* pa = a.plane(c).data();
        const double* pb = b.plane(c).data();
        for (std::size_t i = 0; i < plane; ++i) {
            sq_a[i] = pa[i] * pa[i];
            sq_b[i] = pb[i] * pb[i];
            prod[i] = pa[i] * pb[i];
        }
        filter_valid(pa, h, w, kernel_1d_, tmp, mu_a.data());
        filter_valid(pb, h, w, kernel_1d_, tmp, mu_b.data());
        filter_valid(sq_a.data(), h, w, kernel_1d_, tmp, e_aa.data());
        filter_valid(sq_b.data(), h, w, kernel_1d_, tmp, e_bb.data());
        filter_valid(prod.data(), h, w, kernel_1d_, tmp, e_ab.data());

        for (std::size_t p = 0; p < out_plane; ++p) {
            const double ma = mu_a[p], mb = mu_b[p];
            const double var_a = e_aa[p] - ma * ma;
            const double var_b = e_bb[p] - mb * mb;
            const double cov = e_ab[p] - ma * mb;
            const double num_l = 2.0 * ma * mb + c1;
            const double num_cs = 2.0 * cov + c2;
            const double den_l = ma * ma + mb * mb + c1;
            const double den_cs = var_a + var_b + c2;
            const double s = num_l * num_cs / (den_l * den_cs);
            total += s;
            if (grad_a) {
                const double inv = 1.0 / (den_l * den_cs);
                g_mu[p] = 2.0 * mb * (num_cs - num_l) * inv - 2.0 * ma * s / den_l + 2.0 * ma * s / den_cs;
                g_aa[p] = -s / den_cs;
                g_ab[p] = 2.0 * num_l * inv;
            }
        }

        if (grad_a) {
            double* out = grad_a->values().data() + c * plane;
            filter_valid_adjoint(g_mu.data(), h, w, kernel_1d_, tmp, back.data());
            for (std::size_t i = 0; i < plane; ++i) out[i] = back[i];
            filter_valid_adjoint(g_aa.data(), h, w, kernel_1d_, tmp, back.data());
            for (std::size_t i = 0; i < plane; ++i) out[i] += 2.0 * pa[i] * back[i];
            filter_valid_adjoint(g_ab.data(), h, w, kernel_1d_, tmp, back.data());
            for (std::size_t i = 0; i < plane; ++i) {
                out[i] += pb[i] * back[i];
                out[i] *= scale;
            }
        }
    }
    return total * scale;
}

double SsimMetric::distance_with_gradient(const Image& a, const Image& b, Image& grad_a) const {
    const double value = evaluate(a, b, &grad_a);
    for (double& g : grad_a.values()) g = -g;
    return 1.0 - value;
}

double ssim(const Image& a, const Image& b, const SsimConfig& config) {
    return SsimMetric(config)(a, b);
}

double recon_distance(const Image& a, const Image& b, const SsimConfig& config) {
    return 1.0 - ssim(a, b, config);
}

}  // namespace illuminorm
