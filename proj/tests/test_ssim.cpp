#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "bcsam/rng.hpp"
#include "bcsam/ssim.hpp"
#include "support/ssim_oracle.hpp"

using namespace bcsam;

namespace {

Tensor random_image(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform();
    return t;
}

Tensor gradient_image(int c, int h, int w, bool horizontal) {
    Tensor t({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                t.data()[(ci * h + i) * w + j] =
                    horizontal ? static_cast<double>(j) / (w - 1) : static_cast<double>(i) / (h - 1);
    return t;
}

}  // namespace

TEST_CASE("ssim(x,x) = 1") {
    Rng rng(5);
    Tensor x = random_image({3, 16, 16}, rng);
    CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-9);
    Tensor flat = Tensor::full({1, 12, 12}, 0.5);  // zero-variance image
    CHECK(std::abs(ssim(flat, flat) - 1.0) <= 1e-9);
}

TEST_CASE("ssim is symmetric") {
    Rng rng(7);
    for (int t = 0; t < 5; ++t) {
        Tensor x = random_image({3, 16, 16}, rng);
        Tensor y = random_image({3, 16, 16}, rng);
        CHECK(std::abs(ssim(x, y) - ssim(y, x)) <= 1e-9);
    }
}

TEST_CASE("ssim matches the direct-formula oracle") {
    // two fixed gradient patterns, then random pairs
    Tensor gx = gradient_image(1, 16, 16, true);
    Tensor gy = gradient_image(1, 16, 16, false);
    CHECK(std::abs(ssim(gx, gy) - testing::ssim_oracle(gx, gy, {})) <= 1e-6);

    Rng rng(11);
    for (int t = 0; t < 10; ++t) {
        Tensor x = random_image({1, 16, 16}, rng);
        Tensor y = random_image({1, 16, 16}, rng);
        const double got = ssim(x, y);
        const double want = testing::ssim_oracle(x, y, {});
        CHECK(std::abs(got - want) <= 1e-6);
        CHECK(got <= 1.0 + 1e-12);
        CHECK(got >= -1.0 - 1e-12);
    }
}

TEST_CASE("ssim rejects shape mismatches") {
    Tensor a = Tensor::zeros({1, 16, 16});
    Tensor b = Tensor::zeros({1, 16, 17});
    CHECK_THROWS_AS(ssim(a, b), std::invalid_argument);
}

TEST_CASE("ssim_loss: identity zero, definition, range, resize path") {
    Rng rng(13);
    Tensor m = random_image({3, 32, 32}, rng);
    CHECK(std::abs(ssim_loss(m, m)) <= 1e-9);

    Tensor c = random_image({3, 32, 32}, rng);
    CHECK(ssim_loss(m, c) == 1.0 - ssim(m, c));  // exact by definition
    for (int t = 0; t < 5; ++t) {
        Tensor u = random_image({3, 16, 16}, rng);
        Tensor v = random_image({3, 16, 16}, rng);
        const double l = ssim_loss(u, v);
        CHECK(l >= 0.0);
        CHECK(l <= 2.0);
    }

    // target at a different resolution gets resized onto m's grid
    Tensor small = random_image({3, 16, 16}, rng);
    const double l = ssim_loss(m, small);
    CHECK(l >= 0.0);
    CHECK(l <= 2.0);
}

TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(17);
    Tensor a = random_image({1, 8, 8}, rng);
    Tensor b = random_image({1, 8, 8}, rng);

    ag::Var av = ag::param(a.clone());
    ag::Var bv = ag::constant(b);
    ag::Var s = ssim_var(av, bv);
    ag::backward(s);

    const double h = 1e-5;
    for (int64_t i = 0; i < 12; ++i) {
        Tensor ap = a.clone(), am = a.clone();
        ap.data()[i * 5] += h;
        am.data()[i * 5] -= h;
        const double fd = (ssim(ap, b) - ssim(am, b)) / (2 * h);
        const double an = av.n->grad[i * 5];
        CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}) < 1e-4);
    }
}
