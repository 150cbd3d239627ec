#pragma once

// Maximum mean discrepancy between two latent batches, as the biased
// V-statistic of a sum of Gaussian kernels. By default the bandwidths are
// {m/2, m, 2m} where m is the median pairwise squared distance of the pooled
// batch; the median is treated as a constant (no gradient flows through it).

#include <vector>

#include "bcsam/autograd.hpp"
#include "bcsam/tensor.hpp"

namespace bcsam {

struct MMDConfig {
    // when empty, bandwidths come from the median heuristic times `multipliers`
    std::vector<double> bandwidths;
    std::vector<double> multipliers = {0.5, 1.0, 2.0};
    double min_bandwidth = 1e-12;
};

// median of pairwise squared distances (i<j) over the pooled rows of za, zb
double median_sq_distance(const Tensor& za, const Tensor& zb);

// Differentiable path; za (n,d), zb (m,d), both non-empty.
ag::Var mmd_var(ag::Var za, ag::Var zb, const MMDConfig& cfg = {});

// Value; >= 0; exactly 0 when za and zb are identical multisets.
double mmd(const Tensor& za, const Tensor& zb, const MMDConfig& cfg = {});

}  // namespace bcsam
