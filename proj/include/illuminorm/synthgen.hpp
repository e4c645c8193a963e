#pragma once

#include "illuminorm/dataset.hpp"
#include "illuminorm/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace illuminorm {

/// Per-seat glyph jitter, drawn once per scene and shared by every variant.
struct SeatJitter {
    double scale = 1.0;     // [0.8, 1.2]
    double x_offset = 0.0;  // pixels, [-2, 2]
    double texture = 0.6;   // glyph intensity, [0.4, 0.9]
};

struct SceneSpec {
    int scene_id = 0;
    std::array<int, 3> seats{};
    std::array<SeatJitter, 3> jitter{};
};

/// Photometric nuisance applied on top of a content canvas.
struct IlluminationSpec {
    double gain = 1.0;
    double bias = 0.0;
    double gradient_angle = 0.0;
    double gradient_strength = 0.0;
    double shadow_cx = 0.0;
    double shadow_cy = 0.0;
    double shadow_ax = 1.0;
    double shadow_ay = 1.0;
    double shadow_attenuation = 1.0;  // 1 means no shadow
    double window_brightness = 0.0;

    static IlluminationSpec identity() { return {}; }
};

/// Pixel rectangle [x0, x1] x [y0, y1], inclusive.
struct PixelBox {
    int x0, y0, x1, y1;
    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// Fixed cabin geometry for a given image size.
struct CabinLayout {
    int height;
    int width;

    PixelBox seat_region(int seat) const;
    PixelBox window_region() const;
    double seat_centre_x(int seat) const;
};

/// Intensities of the fixed cabin canvas.
inline constexpr double kCabinBase = 0.35;
inline constexpr double kFrameLevel = 0.12;
inline constexpr double kWindowGlass = 0.08;
inline constexpr double kSeatFill = 0.15;
inline constexpr double kSeatOutline = 0.28;
inline constexpr double kWindowLight = 0.85;

struct RenderedContent {
    Image image;
    std::vector<std::uint8_t> mask;  // H x W, 1 on glyph pixels
};

/// Draws the cabin and the seat glyphs (infant seat: semicircle, child seat: notched
/// rectangle, adult: ellipse body with circular head). Deterministic in its inputs.
RenderedContent render_content(const SceneSpec& spec, int height, int width);

/// clip(gain*c + bias + gradient + window - shadow, 0, 1), computed per pixel.
Image apply_illumination(const Image& content, const IlluminationSpec& illum);

struct GenConfig {
    int height = 64;
    int width = 64;
    int train_scenes = 200;
    int test_scenes = 200;
    int variants = 8;
    std::uint64_t seed = 7;
    std::string balance = "balanced";  // balanced | uniform

    /// Throws ConfigError: scenes >= 1, variants >= 2, size >= 32, known balance mode.
    void validate() const;
};

/// Jitter ranges: the train split uses scale [0.8, 1.0], the test split [1.0, 1.2].
SceneSpec draw_scene_spec(int scene_id, const Label& label, Split split, Rng& rng);

/// Gradient strength is drawn from [0, 0.25] for train and [0.25, 0.4] for test.
IlluminationSpec draw_illumination(Split split, int height, int width, Rng& rng);

/// balanced: cycles through shuffled copies of all 64 labels; uniform: i.i.d. labels.
std::vector<Label> draw_labels(int count, const std::string& balance, Rng& rng);

/// Renders one split in memory (values unquantised).
DatasetManifest render_split(const GenConfig& config, Split split);

struct GeneratedDataset {
    DatasetManifest train;
    DatasetManifest test;
};

/// Writes both splits and meta.json under out, then reloads them from disk.
GeneratedDataset generate_dataset(const GenConfig& config, const std::filesystem::path& out);

}  // namespace illuminorm
