#pragma once

// Channels-first float image utilities. Pixel values live in [0,1]; decoding
// and resizing are backed by OpenCV, everything downstream is plain arrays.

#include <cstdint>
#include <string>
#include <vector>

#include "bcsam/tensor.hpp"

namespace bcsam {

struct ImageF {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // CHW

    ImageF() = default;
    ImageF(int c, int h, int w, float fill = 0.f)
        : channels(c), height(h), width(w),
          data(static_cast<size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

// 0/1 byte mask
struct MaskU8 {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> data;

    MaskU8() = default;
    MaskU8(int h, int w, uint8_t fill = 0)
        : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    int64_t count_nonzero() const {
        int64_t n = 0;
        for (auto v : data) n += v != 0;
        return n;
    }
};

// Decodes any OpenCV-readable file as RGB floats in [0,1]; throws on failure.
ImageF decode_image_rgb(const std::string& path);

ImageF resize_bilinear(const ImageF& img, int out_h, int out_w);

void save_png(const ImageF& img, const std::string& path);

// Mask PNG helpers: nonzero pixels are foreground.
MaskU8 load_mask_png(const std::string& path);
void save_mask_png(const MaskU8& mask, const std::string& path);

Tensor image_to_tensor(const ImageF& img);           // (C,H,W) double
ImageF tensor_to_image(const Tensor& t);              // clamps to [0,1]

}  // namespace bcsam
