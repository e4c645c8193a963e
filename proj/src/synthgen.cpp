#include "illuminorm/synthgen.hpp"

#include "illuminorm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace illuminorm {

namespace fs = std::filesystem;

namespace {

constexpr double kSeatCentres[3] = {11.0, 32.0, 53.0};
constexpr double kReference = 64.0;

int scaled(double v, int extent) { return static_cast<int>(std::lround(v * extent / kReference)); }

Rng derived_rng(std::uint64_t seed, Split split, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(split == Split::train ? 1 : 2),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

constexpr std::uint64_t kLabelStream = 0xFFFF'FFFFull;

bool in_glyph(int seat_class, double x, double y, double cx, double s, double u) {
    switch (seat_class) {
        case kInfantSeat: {
            const double base = 56.0 * u, r = 7.0 * s * u;
            const double dx = x - cx, dy = y - base;
            return y <= base && dx * dx + dy * dy <= r * r;
        }
        case kChildSeat: {
            const double bottom = 58.0 * u, top = bottom - 22.0 * s * u;
            const double half = 6.0 * s * u;
            if (std::abs(x - cx) > half || y < top || y > bottom) return false;
            const bool notch = std::abs(x - cx) <= 2.0 * s * u && y < top + 5.0 * s * u;
            return !notch;
        }
        case kAdult: {
            const double by = 47.0 * u, ax = 6.5 * s * u, ay = 11.0 * s * u;
            const double ex = (x - cx) / ax, ey = (y - by) / ay;
            if (ex * ex + ey * ey <= 1.0) return true;
            const double hr = 4.0 * s * u, hy = by - ay - hr + 1.0;
            const double hx = x - cx, hdy = y - hy;
            return hx * hx + hdy * hdy <= hr * hr;
        }
        default:
            return false;
    }
}

}  // namespace

double CabinLayout::seat_centre_x(int seat) const { return kSeatCentres[seat] * width / kReference; }

PixelBox CabinLayout::seat_region(int seat) const {
    const int cx = scaled(kSeatCentres[seat], width);
    const int half = scaled(10.0, width);
    return {cx - half, scaled(20.0, height), cx + half, scaled(61.0, height)};
}

PixelBox CabinLayout::window_region() const {
    return {scaled(8.0, width), scaled(4.0, height), scaled(56.0, width) - 1, scaled(16.0, height)};
}

RenderedContent render_content(const SceneSpec& spec, int height, int width) {
    const CabinLayout layout{height, width};
    RenderedContent out{Image(height, width, 1, kCabinBase),
                        std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
    Image& img = out.image;
    const int frame = std::max(1, scaled(2.0, std::min(height, width)));
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            if (x < frame || y < frame || x >= width - frame || y >= height - frame) img.at(0, y, x) = kFrameLevel;

    const PixelBox window = layout.window_region();
    for (int y = window.y0; y <= window.y1; ++y)
        for (int x = window.x0; x <= window.x1; ++x) img.at(0, y, x) = kWindowGlass;

    for (int seat = 0; seat < 3; ++seat) {
        const PixelBox box = layout.seat_region(seat);
        for (int y = box.y0; y <= box.y1; ++y)
            for (int x = box.x0; x <= box.x1; ++x) {
                const bool edge = x == box.x0 || x == box.x1 || y == box.y0 || y == box.y1;
                img.at(0, y, x) = edge ? kSeatOutline : kSeatFill;
            }
    }

    const double u = std::min(height, width) / kReference;
    for (int seat = 0; seat < 3; ++seat) {
        const int cls = spec.seats[seat];
        if (cls == kEmpty) continue;
        const SeatJitter& j = spec.jitter[seat];
        const PixelBox box = layout.seat_region(seat);
        const double cx = layout.seat_centre_x(seat) + j.x_offset;
        for (int y = box.y0; y <= box.y1; ++y)
            for (int x = box.x0; x <= box.x1; ++x)
                if (in_glyph(cls, x, y, cx, j.scale, u)) {
                    img.at(0, y, x) = j.texture;
                    out.mask[static_cast<std::size_t>(y) * width + x] = 1;
                }
    }
    return out;
}

Image apply_illumination(const Image& content, const IlluminationSpec& illum) {
    const int h = content.height(), w = content.width();
    const PixelBox window = CabinLayout{h, w}.window_region();
    const double dx = std::cos(illum.gradient_angle), dy = std::sin(illum.gradient_angle);
    const double extent = std::max(h, w);
    Image out(h, w, content.channels());
    for (int c = 0; c < content.channels(); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = content.at(c, y, x);
                const double proj = ((x - (w - 1) / 2.0) * dx + (y - (h - 1) / 2.0) * dy) / extent;
                double value = illum.gain * v + illum.bias + illum.gradient_strength * proj;
                if (window.contains(x, y)) value += illum.window_brightness * kWindowLight;
                if (illum.shadow_attenuation < 1.0) {
                    const double ex = (x - illum.shadow_cx) / illum.shadow_ax;
                    const double ey = (y - illum.shadow_cy) / illum.shadow_ay;
                    if (ex * ex + ey * ey <= 1.0) value -= (1.0 - illum.shadow_attenuation) * illum.gain * v;
                }
                out.at(c, y, x) = std::clamp(value, 0.0, 1.0);
            }
    return out;
}

void GenConfig::validate() const {
    if (train_scenes < 1 || test_scenes < 1) throw ConfigError("scenes per split must be >= 1");
    if (variants < 2) throw ConfigError("variants per scene must be >= 2, got " + std::to_string(variants));
    if (height < 32 || width < 32) throw ConfigError("image size must be >= 32 pixels");
    if (balance != "balanced" && balance != "uniform")
        throw ConfigError("balance mode must be 'balanced' or 'uniform', got '" + balance + "'");
}

SceneSpec draw_scene_spec(int scene_id, const Label& label, Split split, Rng& rng) {
    if (label.kind != Label::Kind::seats || label.seats.size() != 3)
        throw ContractError("synthetic scenes need a 3-seat label");
    SceneSpec spec;
    spec.scene_id = scene_id;
    std::uniform_real_distribution<double> scale(split == Split::train ? 0.8 : 1.0, split == Split::train ? 1.0 : 1.2);
    std::uniform_real_distribution<double> offset(-2.0, 2.0);
    std::uniform_real_distribution<double> texture(0.4, 0.9);
    for (int s = 0; s < 3; ++s) {
        spec.seats[s] = label.seats[s];
        spec.jitter[s].scale = scale(rng);
        spec.jitter[s].x_offset = offset(rng);
        spec.jitter[s].texture = texture(rng);
    }
    return spec;
}

IlluminationSpec draw_illumination(Split split, int height, int width, Rng& rng) {
    using U = std::uniform_real_distribution<double>;
    IlluminationSpec illum;
    illum.gain = U(0.5, 1.3)(rng);
    illum.bias = U(-0.15, 0.15)(rng);
    illum.gradient_angle = U(0.0, 2.0 * std::numbers::pi)(rng);
    illum.gradient_strength = split == Split::train ? U(0.0, 0.25)(rng) : U(0.25, 0.4)(rng);
    illum.shadow_cx = U(0.0, width - 1.0)(rng);
    illum.shadow_cy = U(0.0, height - 1.0)(rng);
    illum.shadow_ax = U(0.1, 0.4)(rng) * width;
    illum.shadow_ay = U(0.1, 0.4)(rng) * height;
    illum.shadow_attenuation = U(0.3, 1.0)(rng);
    illum.window_brightness = U(0.1, 1.0)(rng);
    return illum;
}

std::vector<Label> draw_labels(int count, const std::string& balance, Rng& rng) {
    const auto all = enumerate_seat_labels(3);
    std::vector<Label> labels;
    labels.reserve(count);
    if (balance == "uniform") {
        std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
        for (int i = 0; i < count; ++i) labels.push_back(all[pick(rng)]);
        return labels;
    }
    while (static_cast<int>(labels.size()) < count) {
        auto block = all;
        std::shuffle(block.begin(), block.end(), rng);
        for (auto& l : block) {
            if (static_cast<int>(labels.size()) == count) break;
            labels.push_back(std::move(l));
        }
    }
    return labels;
}

DatasetManifest render_split(const GenConfig& config, Split split) {
    config.validate();
    const int count = split == Split::train ? config.train_scenes : config.test_scenes;
    const int first_id = split == Split::train ? 0 : config.train_scenes;

    Rng label_rng = derived_rng(config.seed, split, kLabelStream);
    const auto labels = draw_labels(count, config.balance, label_rng);

    DatasetManifest manifest;
    manifest.split = split;
    manifest.meta.height = config.height;
    manifest.meta.width = config.width;
    manifest.meta.channels = 1;
    manifest.meta.seed = config.seed;
    manifest.meta.balance = config.balance;
    manifest.scenes.reserve(count);
    for (int k = 0; k < count; ++k) {
        const int id = first_id + k;
        Rng rng = derived_rng(config.seed, split, static_cast<std::uint64_t>(id));
        const SceneSpec spec = draw_scene_spec(id, labels[k], split, rng);
        const RenderedContent content = render_content(spec, config.height, config.width);
        SceneRecord scene;
        scene.scene_id = id;
        scene.label = labels[k];
        for (int j = 0; j < config.variants; ++j)
            scene.variants.push_back(
                apply_illumination(content.image, draw_illumination(split, config.height, config.width, rng)));
        manifest.scenes.push_back(std::move(scene));
    }
    return manifest;
}

GeneratedDataset generate_dataset(const GenConfig& config, const fs::path& out) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw DataError("cannot create output directory " + out.string());
    // Only a previously generated tree (one with meta.json) is replaced.
    const bool previous = fs::exists(out / "meta.json");
    for (Split split : {Split::train, Split::test}) {
        const fs::path split_dir = out / std::string(to_string(split));
        if (fs::exists(split_dir)) {
            if (!previous) throw DataError(split_dir.string() + " exists but " + out.string() + " holds no dataset");
            fs::remove_all(split_dir);
        }
        write_manifest(render_split(config, split), out);
    }
    return {load_manifest(out, Split::train), load_manifest(out, Split::test)};
}

}  // namespace illuminorm
