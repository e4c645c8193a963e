#pragma once

#include "illuminorm/image.hpp"

#include <vector>

namespace illuminorm {

/// Windowed SSIM parameters. The defaults are the usual Gaussian-window constants.
struct SsimConfig {
    int window_size = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    /// Throws ConfigError unless window_size is odd and >= 3, sigma > 0, 0 < k1, k2 < 1, L > 0.
    void validate() const;
    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

/// Normalised 2-D Gaussian kernel, row-major window_size x window_size.
std::vector<double> gaussian_window(const SsimConfig& config);

/// Mean SSIM over all valid (unpadded) windows, averaged over channels.
///
/// Throws ContractError if the shapes differ or the image is smaller than the window.
double ssim(const Image& a, const Image& b, const SsimConfig& config = {});

/// r(a, b) = 1 - SSIM(a, b), in [0, 2].
double recon_distance(const Image& a, const Image& b, const SsimConfig& config = {});

/// SSIM evaluator that keeps its separable kernel and can return d SSIM / d a.
class SsimMetric {
public:
    explicit SsimMetric(SsimConfig config = {});

    const SsimConfig& config() const { return config_; }

    double operator()(const Image& a, const Image& b) const { return evaluate(a, b, nullptr); }

    /// Returns SSIM(a, b); when grad_a is non-null it receives d SSIM / d a (shape of a).
    double evaluate(const Image& a, const Image& b, Image* grad_a) const;

    /// Returns 1 - SSIM(a, b) and writes d r / d a into grad_a.
    double distance_with_gradient(const Image& a, const Image& b, Image& grad_a) const;

private:
    SsimConfig config_;
    std::vector<double> kernel_1d_;
};

}  // namespace illuminorm
