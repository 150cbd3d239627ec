#pragma once

// Structural similarity with the reference constants: 11x11 Gaussian window
// (sigma 1.5), C1=(0.01*L)^2, C2=(0.03*L)^2 for dynamic range L=1. The window
// runs over reflect-101 padded images so the map keeps the input size, and
// the score is the mean of the map over batch, channels and pixels.

#include <vector>

#include "bcsam/autograd.hpp"
#include "bcsam/tensor.hpp"

namespace bcsam {

struct SSIMConfig {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

std::vector<double> gaussian_window(int window, double sigma);

// Differentiable path; a and b are (C,H,W) or (N,C,H,W) and must match.
ag::Var ssim_var(ag::Var a, ag::Var b, const SSIMConfig& cfg = {});

// Value in [-1,1]; symmetric; throws on shape mismatch.
double ssim(const Tensor& a, const Tensor& b, const SSIMConfig& cfg = {});

// 1 - SSIM(m, c). If shapes differ, c is bilinearly resized to m's grid.
double ssim_loss(const Tensor& m, const Tensor& c, const SSIMConfig& cfg = {});

}  // namespace bcsam
