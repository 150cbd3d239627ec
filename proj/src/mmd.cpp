#include "bcsam/mmd.hpp"

#include <algorithm>
#include <stdexcept>

namespace bcsam {

using ag::Var;

namespace {

void check_batch(const Tensor& z, const char* which) {
    if (z.rank() != 2 || z.dim(0) < 1)
        throw std::invalid_argument(std::string("mmd: ") + which +
                                    " must be a non-empty (n,d) batch, got " +
                                    shape_str(z.shape()));
}

void collect_upper(const Tensor& d, std::vector<double>& out) {
    const int64_t n = d.dim(0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) out.push_back(d[i * n + j]);
}

}  // namespace

double median_sq_distance(const Tensor& za, const Tensor& zb) {
    ag::NoGradGuard ng;
    Var a = ag::constant(za);
    Var b = ag::constant(zb);
    std::vector<double> dists;
    collect_upper(ag::pairwise_sqdist(a, a).value(), dists);
    collect_upper(ag::pairwise_sqdist(b, b).value(), dists);
    const Tensor dab = ag::pairwise_sqdist(a, b).value();
    for (int64_t i = 0; i < dab.numel(); ++i) dists.push_back(dab[i]);
    if (dists.empty()) return 0.0;
    const size_t mid = (dists.size() - 1) / 2;
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(mid), dists.end());
    return dists[mid];
}

Var mmd_var(Var za, Var zb, const MMDConfig& cfg) {
    check_batch(za.value(), "za");
    check_batch(zb.value(), "zb");
    if (za.value().dim(1) != zb.value().dim(1))
        throw std::invalid_argument("mmd: dimension mismatch");

    std::vector<double> bw = cfg.bandwidths;
    if (bw.empty()) {
        const double m = std::max(median_sq_distance(za.value(), zb.value()), cfg.min_bandwidth);
        for (double mult : cfg.multipliers) bw.push_back(mult * m);
    }
    for (double b : bw)
        if (b <= 0) throw std::invalid_argument("mmd: bandwidths must be positive");

    Var dxx = ag::pairwise_sqdist(za, za);
    Var dyy = ag::pairwise_sqdist(zb, zb);
    Var dxy = ag::pairwise_sqdist(za, zb);
    Var acc;
    for (double b : bw) {
        Var kxx = ag::mean_all(ag::expv(ag::mul_scalar(dxx, -1.0 / b)));
        Var kyy = ag::mean_all(ag::expv(ag::mul_scalar(dyy, -1.0 / b)));
        Var kxy = ag::mean_all(ag::expv(ag::mul_scalar(dxy, -1.0 / b)));
        Var term = ag::sub(ag::add(kxx, kyy), ag::mul_scalar(kxy, 2.0));
        acc = acc.defined() ? ag::add(acc, term) : term;
    }
    return acc;
}

double mmd(const Tensor& za, const Tensor& zb, const MMDConfig& cfg) {
    ag::NoGradGuard ng;
    return mmd_var(ag::constant(za), ag::constant(zb), cfg).value()[0];
}

}  // namespace bcsam
