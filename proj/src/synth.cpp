#include "bcsam/synth.hpp"

#include <filesystem>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "bcsam/rng.hpp"

namespace fs = std::filesystem;

namespace bcsam {

namespace {

const char* kShapeNames[13] = {"circle", "ring",    "ellipse",  "square",  "diamond",
                               "triangle", "cross", "star",     "hexagon", "crescent",
                               "twodots",  "bar",   "elbow"};

struct Canvas {
    cv::Mat image;  // 8UC3, RGB order
    cv::Mat mask;   // 8U
};

void draw_poly(Canvas& c, const std::vector<cv::Point>& pts, const cv::Scalar& color) {
    cv::fillPoly(c.image, std::vector<std::vector<cv::Point>>{pts}, color);
    cv::fillPoly(c.mask, std::vector<std::vector<cv::Point>>{pts}, cv::Scalar(255));
}

void draw_circle(Canvas& c, cv::Point ctr, int r, const cv::Scalar& color) {
    cv::circle(c.image, ctr, r, color, cv::FILLED);
    cv::circle(c.mask, ctr, r, cv::Scalar(255), cv::FILLED);
}

void erase_circle(Canvas& c, cv::Point ctr, int r, const cv::Scalar& bg) {
    cv::circle(c.image, ctr, r, bg, cv::FILLED);
    cv::circle(c.mask, ctr, r, cv::Scalar(0), cv::FILLED);
}

std::vector<cv::Point> regular_polygon(cv::Point ctr, int r, int sides, double phase) {
    std::vector<cv::Point> pts;
    for (int i = 0; i < sides; ++i) {
        const double a = phase + 2.0 * 3.14159265358979323846 * i / sides;
        pts.emplace_back(ctr.x + static_cast<int>(r * std::cos(a)),
                         ctr.y + static_cast<int>(r * std::sin(a)));
    }
    return pts;
}

void draw_shape(Canvas& c, int shape, cv::Point ctr, int r, double phase,
                const cv::Scalar& fg, const cv::Scalar& bg) {
    switch (shape) {
        case 0:  // circle
            draw_circle(c, ctr, r, fg);
            break;
        case 1:  // ring
            draw_circle(c, ctr, r, fg);
            erase_circle(c, ctr, r / 2, bg);
            break;
        case 2: {  // ellipse
            cv::ellipse(c.image, ctr, {r, r / 2}, phase * 57.3, 0, 360, fg, cv::FILLED);
            cv::ellipse(c.mask, ctr, {r, r / 2}, phase * 57.3, 0, 360, cv::Scalar(255), cv::FILLED);
            break;
        }
        case 3:  // square
            draw_poly(c, regular_polygon(ctr, r, 4, phase + 0.785), fg);
            break;
        case 4:  // diamond
            draw_poly(c, regular_polygon(ctr, r, 4, phase), fg);
            break;
        case 5:  // triangle
            draw_poly(c, regular_polygon(ctr, r, 3, phase), fg);
            break;
        case 6: {  // cross
            const int t = std::max(3, r / 3);
            draw_poly(c, {{ctr.x - r, ctr.y - t}, {ctr.x + r, ctr.y - t},
                          {ctr.x + r, ctr.y + t}, {ctr.x - r, ctr.y + t}}, fg);
            draw_poly(c, {{ctr.x - t, ctr.y - r}, {ctr.x + t, ctr.y - r},
                          {ctr.x + t, ctr.y + r}, {ctr.x - t, ctr.y + r}}, fg);
            break;
        }
        case 7: {  // five-point star
            std::vector<cv::Point> pts;
            for (int i = 0; i < 10; ++i) {
                const double a = phase + 3.14159265358979323846 * i / 5.0;
                const int rr = (i % 2 == 0) ? r : r * 2 / 5;
                pts.emplace_back(ctr.x + static_cast<int>(rr * std::cos(a)),
                                 ctr.y + static_cast<int>(rr * std::sin(a)));
            }
            draw_poly(c, pts, fg);
            break;
        }
        case 8:  // hexagon
            draw_poly(c, regular_polygon(ctr, r, 6, phase), fg);
            break;
        case 9:  // crescent
            draw_circle(c, ctr, r, fg);
            erase_circle(c, {ctr.x + r / 2, ctr.y}, r * 3 / 4, bg);
            break;
        case 10:  // two dots
            draw_circle(c, {ctr.x - r / 2, ctr.y}, r / 2, fg);
            draw_circle(c, {ctr.x + r / 2, ctr.y}, r / 2, fg);
            break;
        case 11:  // bar
            draw_poly(c, {{ctr.x - r, ctr.y - r / 4}, {ctr.x + r, ctr.y - r / 4},
                          {ctr.x + r, ctr.y + r / 4}, {ctr.x - r, ctr.y + r / 4}}, fg);
            break;
        case 12:  // elbow
            draw_poly(c, {{ctr.x - r, ctr.y - r}, {ctr.x - r / 3, ctr.y - r},
                          {ctr.x - r / 3, ctr.y + r / 3}, {ctr.x + r, ctr.y + r / 3},
                          {ctr.x + r, ctr.y + r}, {ctr.x - r, ctr.y + r}}, fg);
            break;
        default:
            throw std::invalid_argument("shape class out of range");
    }
}

Canvas render(int shape, DomainId domain, Rng& rng, int size) {
    Canvas c;
    // domain tint: cool background for matek19, warm for acevedo20 (RGB)
    const cv::Scalar bg = domain == DomainId::matek19 ? cv::Scalar(150, 170, 215)
                                                      : cv::Scalar(225, 200, 150);
    c.image = cv::Mat(size, size, CV_8UC3, bg);
    c.mask = cv::Mat::zeros(size, size, CV_8U);

    // shared foreground color distribution: both domains draw the same purples
    const cv::Scalar fg(120 + rng.below(60), 40 + rng.below(40), 110 + rng.below(60));
    const int r = size / 6 + static_cast<int>(rng.below(static_cast<uint64_t>(size / 8)));
    const cv::Point ctr(size / 2 + static_cast<int>(rng.below(21)) - 10,
                        size / 2 + static_cast<int>(rng.below(21)) - 10);
    const double phase = rng.uniform(0.0, 3.14159);
    draw_shape(c, shape, ctr, r, phase, fg, bg);

    // mild pixel noise so backgrounds are not constant
    for (int y = 0; y < size; ++y) {
        auto* row = c.image.ptr<cv::Vec3b>(y);
        for (int x = 0; x < size; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const int v = row[x][ch] + static_cast<int>(rng.below(11)) - 5;
                row[x][ch] = static_cast<uint8_t>(std::clamp(v, 0, 255));
            }
    }
    return c;
}

ImageF canvas_to_imagef(const Canvas& c) {
    ImageF img(3, c.image.rows, c.image.cols);
    for (int y = 0; y < c.image.rows; ++y) {
        const auto* row = c.image.ptr<cv::Vec3b>(y);
        for (int x = 0; x < c.image.cols; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(ch, y, x) = static_cast<float>(row[x][ch]) / 255.f;
    }
    return img;
}

MaskU8 canvas_to_mask(const Canvas& c) {
    MaskU8 m(c.mask.rows, c.mask.cols);
    for (int y = 0; y < c.mask.rows; ++y)
        for (int x = 0; x < c.mask.cols; ++x)
            m.at(y, x) = c.mask.at<uint8_t>(y, x) ? 1 : 0;
    return m;
}

}  // namespace

std::pair<ImageF, MaskU8> synth_image(int shape_class, DomainId domain, uint64_t seed,
                                      int image_size) {
    Rng rng(seed);
    Canvas c = render(shape_class, domain, rng, image_size);
    return {canvas_to_imagef(c), canvas_to_mask(c)};
}

LabelMap generate_synthetic_dataset(const std::string& root, const SynthConfig& cfg) {
    LabelMap map;
    // matek19 side: 15 raw labels, SH13/SH14 merge into circle/ring
    for (int i = 0; i < 13; ++i)
        map.rules["matek19"]["SH" + std::string(i < 10 ? "0" : "") + std::to_string(i)] =
            kShapeNames[i];
    map.rules["matek19"]["SH13"] = kShapeNames[0];
    map.rules["matek19"]["SH14"] = kShapeNames[1];
    for (int i = 0; i < 13; ++i)
        map.rules["acevedo20"][std::string("c") + std::to_string(i)] = kShapeNames[i];

    Rng rng(cfg.seed);
    for (const DomainId domain : {DomainId::matek19, DomainId::acevedo20}) {
        const std::string dname = to_string(domain);
        for (const auto& [raw, unified] : map.rules.at(dname)) {
            int shape = 0;
            while (std::string(kShapeNames[shape]) != unified) ++shape;
            // merged raws share a class; split the per-class budget across them
            int count = cfg.per_class;
            if (domain == DomainId::matek19 && (shape == 0 || shape == 1))
                count = std::max(1, cfg.per_class / 2);
            const fs::path dir = fs::path(root) / dname / raw;
            fs::create_directories(dir);
            for (int i = 0; i < count; ++i) {
                Canvas c = render(shape, domain, rng, cfg.image_size);
                const std::string fname = "img_" + std::to_string(i) + ".png";
                save_png(canvas_to_imagef(c), (dir / fname).string());
                if (cfg.emit_masks) {
                    const fs::path mdir = fs::path(root) / "masks" / dname / raw;
                    fs::create_directories(mdir);
                    save_mask_png(canvas_to_mask(c), (mdir / fname).string());
                }
            }
        }
    }
    save_label_map(map, (fs::path(root) / "label_map.json").string());
    return map;
}

}  // namespace bcsam
