#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "lmbis/tensor.hpp"

namespace lmbis {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit image, row-major, interleaved. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Binary mask, values strictly {0,1}.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int h, int w) : width(w), height(h), v(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count_ones() const;
};

// Dispatches on file extension: .png, .jpg/.jpeg, .tif/.tiff, .ppm/.pgm.
// Decodes to 8-bit gray or RGB.
ImageU8 decode_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const ImageU8& image);
void write_ppm(const std::filesystem::path& path, const ImageU8& image);  // P6 / P5
void write_jpeg(const std::filesystem::path& path, const ImageU8& image, int quality = 98);
void write_tiff(const std::filesystem::path& path, const ImageU8& image);

// Routes to the writer matching the extension.
void write_image(const std::filesystem::path& path, const ImageU8& image);

// RGB float tensor (1,3,H,W) in [0,1]; grayscale input is replicated.
Tensor image_to_tensor(const ImageU8& image);

// One channel of a tensor as 8-bit gray, round(255 * v) clamped.
ImageU8 tensor_channel_to_gray(const Tensor& t, int channel);

// Pixel >= threshold (any channel averaged) becomes 1. Annotations are
// nominally binary but containers store 8-bit values.
Mask mask_from_image(const ImageU8& image, int threshold = 128);

ImageU8 mask_to_image(const Mask& mask);  // 0 -> 0, 1 -> 255

}  // namespace lmbis
