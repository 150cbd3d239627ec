#pragma once

// Small layer/optimizer toolkit on top of the autograd engine.

#include <cmath>
#include <string>
#include <vector>

#include "bcsam/autograd.hpp"
#include "bcsam/rng.hpp"
#include "bcsam/tensor.hpp"

namespace bcsam::nn {

using ag::Var;

// Named trainable parameters, the unit optimizers and checkpoints work with.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Var> vars;

    Var add(const std::string& name, Tensor init) {
        names.push_back(name);
        vars.push_back(ag::param(std::move(init)));
        return vars.back();
    }

    void append(const ParamSet& other, const std::string& prefix) {
        for (size_t i = 0; i < other.vars.size(); ++i) {
            names.push_back(prefix + other.names[i]);
            vars.push_back(other.vars[i]);
        }
    }

    size_t size() const { return vars.size(); }

    int64_t count_scalars() const {
        int64_t n = 0;
        for (const auto& v : vars) n += v.value().numel();
        return n;
    }

    void zero_grad() {
        for (auto& v : vars) v.n->grad = Tensor{};
    }
};

inline Tensor normal_init(Shape s, double stddev, Rng& rng) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, stddev);
    return t;
}

// Kaiming-style fan-in scaling, the default for conv/linear weights here.
inline Tensor fanin_init(Shape s, int64_t fan_in, Rng& rng) {
    return normal_init(std::move(s), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

struct Linear {
    Var w, b;

    static Linear make(ParamSet& ps, const std::string& name, int in, int out, Rng& rng) {
        Linear l;
        l.w = ps.add(name + ".w", fanin_init({out, in}, in, rng));
        l.b = ps.add(name + ".b", Tensor::zeros({out}));
        return l;
    }

    Var operator()(Var x) const { return ag::linear(x, w, b); }
};

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 0;

    static Conv2d make(ParamSet& ps, const std::string& name, int cin, int cout, int k,
                       int stride, int pad, Rng& rng) {
        Conv2d c;
        c.w = ps.add(name + ".w", fanin_init({cout, cin, k, k}, static_cast<int64_t>(cin) * k * k, rng));
        c.b = ps.add(name + ".b", Tensor::zeros({cout}));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Var operator()(Var x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct ConvTranspose2d {
    Var w, b;
    int stride = 1, pad = 0;

    static ConvTranspose2d make(ParamSet& ps, const std::string& name, int cin, int cout, int k,
                                int stride, int pad, Rng& rng) {
        ConvTranspose2d c;
        c.w = ps.add(name + ".w", fanin_init({cin, cout, k, k}, static_cast<int64_t>(cin) * k * k, rng));
        c.b = ps.add(name + ".b", Tensor::zeros({cout}));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Var operator()(Var x) const { return ag::conv_transpose2d(x, w, b, stride, pad); }
};

struct LayerNorm {
    Var gamma, beta;

    static LayerNorm make(ParamSet& ps, const std::string& name, int dim) {
        LayerNorm ln;
        ln.gamma = ps.add(name + ".gamma", Tensor::full({dim}, 1.0));
        ln.beta = ps.add(name + ".beta", Tensor::zeros({dim}));
        return ln;
    }

    Var operator()(Var x) const { return ag::layer_norm(x, gamma, beta); }
};

// Decoupled weight decay Adam (AdamW).
class AdamW {
public:
    AdamW(ParamSet params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : params_(std::move(params)), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& v : params_.vars) {
            m_.push_back(Tensor::zeros(v.value().shape()));
            v_.push_back(Tensor::zeros(v.value().shape()));
        }
    }

    const ParamSet& params() const { return params_; }

    void zero_grad() { params_.zero_grad(); }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (size_t p = 0; p < params_.vars.size(); ++p) {
            auto& var = params_.vars[p];
            if (!var.n->grad.defined()) continue;
            double* theta = var.n->value.data();
            const double* g = var.n->grad.data();
            double* m = m_[p].data();
            double* v = v_[p].data();
            const int64_t n = var.n->value.numel();
            for (int64_t i = 0; i < n; ++i) {
                m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
                v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                theta[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * theta[i]);
            }
        }
    }

private:
    ParamSet params_;
    double wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Linear warm-up over the first `warmup_frac` of steps, then cosine decay to 0.
struct WarmupCosine {
    double lr_max = 5e-4;
    int64_t total_steps = 1;
    double warmup_frac = 0.1;

    int64_t warmup_steps() const {
        auto w = static_cast<int64_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
        return std::max<int64_t>(1, std::min(w, total_steps));
    }

    double at(int64_t step) const {
        const int64_t w = warmup_steps();
        if (step < w) return lr_max * static_cast<double>(step + 1) / static_cast<double>(w);
        const int64_t span = std::max<int64_t>(1, total_steps - 1 - w);
        const double x = static_cast<double>(step - w) / static_cast<double>(span);
        return 0.5 * lr_max * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, x)));
    }
};

}  // namespace bcsam::nn
