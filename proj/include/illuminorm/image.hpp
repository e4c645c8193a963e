#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace illuminorm {

/// Planar H x W x C image with values in [0, 1].
///
/// Storage is channel-major: value(c, y, x) lives at (c * H + y) * W + x.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels = 1, double fill = 0.0);
    Image(int height, int width, int channels, std::vector<double> values);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
    double at(int c, int y, int x) const { return values_[index(c, y, x)]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<const double> plane(int c) const;

    bool same_shape(const Image& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    /// All values finite and inside [0, 1].
    bool in_unit_range() const;

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> values_;
};

/// Reads an 8-bit grayscale or RGB PNG (palette/alpha are stripped). Throws DataError.
Image read_png(const std::filesystem::path& path);

/// Writes 8-bit PNG, rounding each value to the nearest of 256 levels. Throws DataError.
void write_png(const Image& image, const std::filesystem::path& path);

/// Rounds every value to the 8-bit grid a PNG round trip would produce.
Image quantize_8bit(const Image& image);

/// Tiles equally shaped images into one canvas; rows may have different lengths.
Image tile_grid(const std::vector<std::vector<Image>>& rows, int padding = 2);

}  // namespace illuminorm
