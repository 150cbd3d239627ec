#include "bcsam/ssim.hpp"

#include <cmath>
#include <stdexcept>

namespace bcsam {

using ag::Var;

std::vector<double> gaussian_window(int window, double sigma) {
    std::vector<double> k(static_cast<size_t>(window));
    const double c = (window - 1) / 2.0;
    double sum = 0;
    for (int i = 0; i < window; ++i) {
        k[static_cast<size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace {

Var as_nchw(Var x) {
    if (x.value().rank() == 3) {
        Shape s = x.shape();
        return ag::reshape(x, {1, s[0], s[1], s[2]});
    }
    if (x.value().rank() == 4) return x;
    throw std::invalid_argument("ssim: expects (C,H,W) or (N,C,H,W), got " +
                                shape_str(x.shape()));
}

}  // namespace

Var ssim_var(Var a, Var b, const SSIMConfig& cfg) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    a = as_nchw(a);
    b = as_nchw(b);
    const int pad = cfg.window / 2;
    if (a.value().dim(2) <= pad || a.value().dim(3) <= pad)
        throw std::invalid_argument("ssim: image smaller than half window");
    const auto k = gaussian_window(cfg.window, cfg.sigma);
    auto blur = [&](Var x) {
        return ag::conv1d_h_fixed(ag::conv1d_w_fixed(ag::reflect_pad2d(x, pad), k), k);
    };
    const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
    const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;

    Var mu_a = blur(a);
    Var mu_b = blur(b);
    Var var_a = ag::sub(blur(ag::mul(a, a)), ag::mul(mu_a, mu_a));
    Var var_b = ag::sub(blur(ag::mul(b, b)), ag::mul(mu_b, mu_b));
    Var cov = ag::sub(blur(ag::mul(a, b)), ag::mul(mu_a, mu_b));

    Var num = ag::mul(ag::add_scalar(ag::mul_scalar(ag::mul(mu_a, mu_b), 2.0), c1),
                      ag::add_scalar(ag::mul_scalar(cov, 2.0), c2));
    Var den = ag::mul(ag::add_scalar(ag::add(ag::mul(mu_a, mu_a), ag::mul(mu_b, mu_b)), c1),
                      ag::add_scalar(ag::add(var_a, var_b), c2));
    return ag::mean_all(ag::divv(num, den));
}

double ssim(const Tensor& a, const Tensor& b, const SSIMConfig& cfg) {
    ag::NoGradGuard ng;
    return ssim_var(ag::constant(a), ag::constant(b), cfg).value()[0];
}

double ssim_loss(const Tensor& m, const Tensor& c, const SSIMConfig& cfg) {
    ag::NoGradGuard ng;
    Var mv = as_nchw(ag::constant(m));
    Var cv = as_nchw(ag::constant(c));
    if (cv.shape() != mv.shape()) {
        if (cv.value().dim(0) != mv.value().dim(0) || cv.value().dim(1) != mv.value().dim(1))
            throw std::invalid_argument("ssim_loss: channel/batch mismatch");
        cv = ag::bilinear_resize(cv, static_cast<int>(mv.value().dim(2)),
                                 static_cast<int>(mv.value().dim(3)));
    }
    return 1.0 - ssim_var(mv, cv, cfg).value()[0];
}

}  // namespace bcsam
