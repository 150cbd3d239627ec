#include "bcsam/image.hpp"

#include <algorithm>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace bcsam {

namespace {

ImageF from_mat_rgb(const cv::Mat& rgb) {
    ImageF out(3, rgb.rows, rgb.cols);
    for (int y = 0; y < rgb.rows; ++y) {
        const auto* row = rgb.ptr<cv::Vec3b>(y);
        for (int x = 0; x < rgb.cols; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(c, y, x) = static_cast<float>(row[x][c]) / 255.f;
    }
    return out;
}

cv::Mat to_mat_rgb(const ImageF& img) {
    if (img.channels != 3) throw std::invalid_argument("expected a 3-channel image");
    cv::Mat m(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = m.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(img.at(c, y, x), 0.f, 1.f);
                row[x][c] = static_cast<uint8_t>(std::lround(v * 255.f));
            }
    }
    return m;
}

}  // namespace

ImageF decode_image_rgb(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot decode image: " + path);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return from_mat_rgb(rgb);
}

ImageF resize_bilinear(const ImageF& img, int out_h, int out_w) {
    if (img.height == out_h && img.width == out_w) return img;
    ImageF out(img.channels, out_h, out_w);
    for (int c = 0; c < img.channels; ++c) {
        cv::Mat src(img.height, img.width, CV_32F,
                    const_cast<float*>(img.data.data() + static_cast<size_t>(c) * img.height * img.width));
        cv::Mat dst(out_h, out_w, CV_32F,
                    out.data.data() + static_cast<size_t>(c) * out_h * out_w);
        cv::resize(src, dst, cv::Size(out_w, out_h), 0, 0, cv::INTER_LINEAR);
    }
    return out;
}

void save_png(const ImageF& img, const std::string& path) {
    cv::Mat rgb = to_mat_rgb(img);
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw std::runtime_error("cannot write image: " + path);
}

MaskU8 load_mask_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("cannot decode mask: " + path);
    MaskU8 out(m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            out.at(y, x) = m.at<uint8_t>(y, x) ? 1 : 0;
    return out;
}

void save_mask_png(const MaskU8& mask, const std::string& path) {
    cv::Mat m(mask.height, mask.width, CV_8U);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            m.at<uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
    if (!cv::imwrite(path, m)) throw std::runtime_error("cannot write mask: " + path);
}

Tensor image_to_tensor(const ImageF& img) {
    Tensor t({img.channels, img.height, img.width});
    for (size_t i = 0; i < img.data.size(); ++i)
        t.data()[i] = static_cast<double>(img.data[i]);
    return t;
}

ImageF tensor_to_image(const Tensor& t) {
    if (t.rank() != 3) throw std::invalid_argument("tensor_to_image: expects (C,H,W)");
    ImageF img(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
    for (int64_t i = 0; i < t.numel(); ++i)
        img.data[static_cast<size_t>(i)] = static_cast<float>(std::clamp(t[i], 0.0, 1.0));
    return img;
}

}  // namespace bcsam
