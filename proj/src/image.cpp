#include "illuminorm/image.hpp"

#include "illuminorm/errors.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>

namespace illuminorm {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0)
        throw ContractError("image dimensions must be non-negative");
    values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(height) * width * channels)
        throw ContractError("image value count does not match its shape");
}

std::span<const double> Image::plane(int c) const {
    const auto n = static_cast<std::size_t>(height_) * width_;
    return std::span<const double>(values_).subspan(c * n, n);
}

bool Image::in_unit_range() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw DataError("cannot open image " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialisation failed");
    }
    std::vector<png_bytep> rows;
    std::vector<std::uint8_t> buffer;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("cannot decode image " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const auto color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    const auto stride = png_get_rowbytes(png, info);
    buffer.resize(stride * height);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (channels != 1 && channels != 3)
        throw DataError("unsupported channel count in " + path.string());
    Image image(height, width, channels);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                image.at(c, y, x) = buffer[y * stride + x * channels + c] / 255.0;
    return image;
}

void write_png(const Image& image, const std::filesystem::path& path) {
    if (image.channels() != 1 && image.channels() != 3)
        throw ContractError("PNG output supports 1 or 3 channels");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw DataError("cannot write image " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialisation failed");
    }
    const int channels = image.channels();
    std::vector<std::uint8_t> buffer(static_cast<std::size_t>(image.height()) * image.width() * channels);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                buffer[(y * image.width() + x) * channels + c] = to_byte(image.at(c, y, x));
    std::vector<png_bytep> rows(image.height());
    for (int y = 0; y < image.height(); ++y) rows[y] = buffer.data() + y * image.width() * channels;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("cannot encode image " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width(), image.height(), 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image quantize_8bit(const Image& image) {
    Image out = image;
    for (double& v : out.values()) v = to_byte(v) / 255.0;
    return out;
}

Image tile_grid(const std::vector<std::vector<Image>>& rows, int padding) {
    const Image* first = nullptr;
    std::size_t columns = 0;
    for (const auto& row : rows) {
        columns = std::max(columns, row.size());
        if (!first && !row.empty()) first = &row.front();
    }
    if (!first) throw ContractError("tile_grid needs at least one image");
    const int h = first->height(), w = first->width(), ch = first->channels();
    const int total_h = static_cast<int>(rows.size()) * (h + padding) + padding;
    const int total_w = static_cast<int>(columns) * (w + padding) + padding;
    Image canvas(total_h, total_w, ch, 1.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t col = 0; col < rows[r].size(); ++col) {
            const Image& tile = rows[r][col];
            if (!tile.same_shape(*first)) throw ContractError("tile_grid images differ in shape");
            const int oy = padding + static_cast<int>(r) * (h + padding);
            const int ox = padding + static_cast<int>(col) * (w + padding);
            for (int c = 0; c < ch; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) canvas.at(c, oy + y, ox + x) = tile.at(c, y, x);
        }
    }
    return canvas;
}

}  // namespace illuminorm
