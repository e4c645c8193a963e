#pragma once

#include "illuminorm/dataset.hpp"
#include "illuminorm/image.hpp"
#include "illuminorm/model.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testing {

inline illuminorm::Image random_image(int h, int w, int c, illuminorm::Rng& rng, double lo = 0.0, double hi = 1.0) {
    illuminorm::Image img(h, w, c);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : img.values()) v = u(rng);
    return img;
}

/// Scene with n constant-valued variants (value = base + 0.05 * j).
inline illuminorm::SceneRecord constant_scene(int id, illuminorm::Label label, int n, int h = 16, int w = 16,
                                              double base = 0.2) {
    illuminorm::SceneRecord s;
    s.scene_id = id;
    s.label = std::move(label);
    for (int j = 0; j < n; ++j) s.variants.emplace_back(h, w, 1, base + 0.05 * j);
    return s;
}

inline illuminorm::DatasetManifest manifest_of(std::vector<illuminorm::SceneRecord> scenes, int h = 16, int w = 16) {
    illuminorm::DatasetManifest m;
    m.meta.height = h;
    m.meta.width = w;
    m.scenes = std::move(scenes);
    return m;
}

/// Fresh directory under the system temp path, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path = std::filesystem::temp_directory_path() / ("illuminorm-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

/// Codec that embeds every image as its mean and first pixel and decodes to a constant image.
class StubCodec final : public illuminorm::ImageCodec {
public:
    enum class Mode { identity, constant, mean_pixel };
    StubCodec(Mode mode, int h, int w) : mode_(mode), h_(h), w_(w) {}

    int latent_dim() const override { return mode_ == Mode::identity ? h_ * w_ : 2; }
    std::vector<float> embed(const illuminorm::Image& x) const override {
        if (mode_ == Mode::identity) return {x.values().begin(), x.values().end()};
        if (mode_ == Mode::constant) return {0.0f, 0.0f};
        double mean = 0.0;
        for (double v : x.values()) mean += v;
        mean /= static_cast<double>(x.size());
        return {static_cast<float>(mean), static_cast<float>(x.values()[0])};
    }
    illuminorm::Image decode(std::span<const float> z) const override {
        if (mode_ == Mode::identity) {
            illuminorm::Image img(h_, w_, 1);
            for (std::size_t i = 0; i < img.size(); ++i) img.values()[i] = z[i];
            return img;
        }
        if (mode_ == Mode::constant) return illuminorm::Image(h_, w_, 1, 0.5);
        return illuminorm::Image(h_, w_, 1, z[0]);
    }
    illuminorm::Image reconstruct(const illuminorm::Image& x) const override {
        return mode_ == Mode::identity ? x : decode(embed(x));
    }

private:
    Mode mode_;
    int h_, w_;
};

}  // namespace testing
