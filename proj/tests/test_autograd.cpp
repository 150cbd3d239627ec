#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "bcsam/autograd.hpp"
#include "bcsam/nn.hpp"
#include "bcsam/rng.hpp"

using namespace bcsam;
using ag::Var;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Central finite differences against the analytic gradient for every input.
// `f` must rebuild the graph from the given leaves each call.
void fd_check(const std::vector<Tensor>& inputs,
              const std::function<Var(const std::vector<Var>&)>& f,
              double h = 1e-5, double tol = 1e-6) {
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(ag::param(t.clone()));
    Var loss = f(leaves);
    REQUIRE(loss.value().numel() == 1);
    ag::backward(loss);

    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor base = leaves[k].value().clone();
        REQUIRE(leaves[k].n->grad.defined());
        for (int64_t i = 0; i < base.numel(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Var> probe;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    Tensor t = leaves[j].value().clone();
                    if (j == k) t.data()[i] += delta;
                    probe.push_back(ag::constant(t));
                }
                return f(probe).value().data()[0];
            };
            const double fd = (eval(h) - eval(-h)) / (2.0 * h);
            const double an = leaves[k].n->grad.data()[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
            CHECK(std::abs(fd - an) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise ops: values and gradients") {
    Rng rng(7);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({2, 3}, rng, 0.5, 1.5);

    fd_check({a, b}, [](const std::vector<Var>& v) {
        return ag::mean_all(ag::add(v[0], v[1]));
    });
    fd_check({a, b}, [](const std::vector<Var>& v) {
        return ag::mean_all(ag::sub(v[0], v[1]));
    });
    fd_check({a, b}, [](const std::vector<Var>& v) {
        return ag::mean_all(ag::mul(v[0], v[1]));
    });
    fd_check({a, b}, [](const std::vector<Var>& v) {
        return ag::mean_all(ag::divv(v[0], v[1]));
    });
    fd_check({a}, [](const std::vector<Var>& v) {
        return ag::sum_all(ag::mul_scalar(ag::add_scalar(v[0], 0.3), -1.7));
    });
    fd_check({a}, [](const std::vector<Var>& v) { return ag::mean_all(ag::expv(v[0])); });
    fd_check({b}, [](const std::vector<Var>& v) { return ag::mean_all(ag::logv(v[0])); });
    fd_check({a}, [](const std::vector<Var>& v) { return ag::mean_all(ag::sigmoid(v[0])); });
    fd_check({a}, [](const std::vector<Var>& v) { return ag::mean_all(ag::gelu(v[0])); });
}

TEST_CASE("relu gradient away from the kink") {
    Tensor a = Tensor::from({4}, {-0.9, -0.2, 0.3, 1.4});
    fd_check({a}, [](const std::vector<Var>& v) { return ag::sum_all(ag::relu(v[0])); });
}

TEST_CASE("matmul, bmm, linear gradients") {
    Rng rng(11);
    fd_check({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
             [](const std::vector<Var>& v) { return ag::mean_all(ag::matmul(v[0], v[1])); });
    fd_check({random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
             [](const std::vector<Var>& v) { return ag::mean_all(ag::bmm(v[0], v[1])); });
    fd_check({random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)},
             [](const std::vector<Var>& v) {
                 return ag::mean_all(ag::linear(v[0], v[1], v[2]));
             });
}

TEST_CASE("shape ops propagate gradients") {
    Rng rng(13);
    fd_check({random_tensor({2, 3, 4}, rng)}, [](const std::vector<Var>& v) {
        return ag::mean_all(ag::mul(ag::reshape(v[0], {4, 6}), ag::reshape(v[0], {4, 6})));
    });
    fd_check({random_tensor({2, 3, 4}, rng)}, [](const std::vector<Var>& v) {
        Var p = ag::permute(v[0], {2, 0, 1});
        return ag::mean_all(ag::mul(p, p));
    });
    fd_check({random_tensor({5, 3}, rng)}, [](const std::vector<Var>& v) {
        Var s = ag::slice_rows(v[0], 1, 3);
        return ag::mean_all(ag::mul(s, s));
    });
}

TEST_CASE("permute value correctness") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Var p = ag::permute(ag::constant(t), {1, 0});
    CHECK(p.shape() == Shape{3, 2});
    CHECK(p.value()[0] == 1);
    CHECK(p.value()[1] == 4);
    CHECK(p.value()[2] == 2);
    CHECK(p.value()[5] == 6);
}

TEST_CASE("conv2d against direct computation and FD") {
    Rng rng(17);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);

    Var out = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), 1, 1);
    CHECK(out.shape() == Shape{1, 3, 5, 5});
    // direct check of one output element: out[0, co, i, j]
    const int co = 1, oi = 2, oj = 3;
    double expect = b[co];
    for (int ci = 0; ci < 2; ++ci)
        for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
                const int ii = oi - 1 + ki, jj = oj - 1 + kj;
                if (ii < 0 || ii >= 5 || jj < 0 || jj >= 5) continue;
                expect += w[((co * 2 + ci) * 3 + ki) * 3 + kj] * x[(ci * 5 + ii) * 5 + jj];
            }
    CHECK(out.value()[(co * 5 + oi) * 5 + oj] == doctest::Approx(expect).epsilon(1e-12));

    fd_check({x, w, b}, [](const std::vector<Var>& v) {
        Var y = ag::conv2d(v[0], v[1], v[2], 2, 1);
        return ag::mean_all(ag::mul(y, y));
    });
}

TEST_CASE("conv_transpose2d doubles spatial size and matches FD") {
    Rng rng(19);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 4, 4}, rng);
    Tensor b = random_tensor({2}, rng);

    Var out = ag::conv_transpose2d(ag::constant(x), ag::constant(w), ag::constant(b), 2, 1);
    CHECK(out.shape() == Shape{2, 2, 8, 8});

    fd_check({x, w, b}, [](const std::vector<Var>& v) {
        Var y = ag::conv_transpose2d(v[0], v[1], v[2], 2, 1);
        return ag::mean_all(ag::mul(y, y));
    });
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    // <conv(x), y> == <x, conv_transpose(y)> for shared weights, no bias
    Rng rng(23);
    Tensor x = random_tensor({1, 3, 6, 6}, rng);
    Tensor w = random_tensor({4, 3, 4, 4}, rng);  // conv: 3 -> 4 channels
    Tensor y = random_tensor({1, 4, 3, 3}, rng);  // conv output for k4 s2 p1

    ag::NoGradGuard ng;
    Var cx = ag::conv2d(ag::constant(x), ag::constant(w), Var{}, 2, 1);
    REQUIRE(cx.shape() == Shape{1, 4, 3, 3});
    // transpose weights (Cout,Cin,k,k) -> (Cin=4 in tconv convention)
    Var ty = ag::conv_transpose2d(ag::constant(y), ag::constant(w), Var{}, 2, 1);
    REQUIRE(ty.shape() == Shape{1, 3, 6, 6});

    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < cx.value().numel(); ++i) lhs += cx.value()[i] * y[i];
    for (int64_t i = 0; i < ty.value().numel(); ++i) rhs += ty.value()[i] * x[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("layer_norm and softmax gradients") {
    Rng rng(29);
    fd_check({random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
              random_tensor({6}, rng)},
             [](const std::vector<Var>& v) {
                 Var y = ag::layer_norm(v[0], v[1], v[2]);
                 return ag::mean_all(ag::mul(y, y));
             },
             1e-5, 1e-5);
    fd_check({random_tensor({4, 5}, rng)}, [](const std::vector<Var>& v) {
        Var y = ag::softmax_lastdim(v[0]);
        return ag::mean_all(ag::mul(y, y));
    });
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(31);
    Tensor x = random_tensor({3, 7}, rng, -5, 5);
    Var y = ag::softmax_lastdim(ag::constant(x));
    for (int r = 0; r < 3; ++r) {
        double s = 0;
        for (int d = 0; d < 7; ++d) s += y.value()[r * 7 + d];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("reductions, gap, channel bias") {
    Rng rng(37);
    fd_check({random_tensor({2, 3, 4, 4}, rng)},
             [](const std::vector<Var>& v) { return ag::mean_all(ag::gap(v[0])); });
    fd_check({random_tensor({2, 3, 4, 4}, rng), random_tensor({3}, rng)},
             [](const std::vector<Var>& v) {
                 Var y = ag::add_channel_bias(v[0], v[1]);
                 return ag::mean_all(ag::mul(y, y));
             });
}

TEST_CASE("reflect pad, separable fixed convs, bilinear resize") {
    Rng rng(41);
    std::vector<double> kernel = {0.25, 0.5, 0.25};
    fd_check({random_tensor({1, 2, 6, 6}, rng)}, [&](const std::vector<Var>& v) {
        Var y = ag::reflect_pad2d(v[0], 2);
        y = ag::conv1d_w_fixed(y, kernel);
        y = ag::conv1d_h_fixed(y, kernel);
        return ag::mean_all(ag::mul(y, y));
    });
    fd_check({random_tensor({1, 2, 5, 7}, rng)}, [](const std::vector<Var>& v) {
        Var y = ag::bilinear_resize(v[0], 9, 4);
        return ag::mean_all(ag::mul(y, y));
    });

    // reflect-101 value spot check on a 1x1x3x3 grid
    Tensor t = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Var p = ag::reflect_pad2d(ag::constant(t), 1);
    CHECK(p.shape() == Shape{1, 1, 5, 5});
    CHECK(p.value()[0] == 5);   // (-1,-1) -> (1,1)
    CHECK(p.value()[1] == 4);   // (-1,0) -> (1,0)
    CHECK(p.value()[6] == 1);   // (0,0)
}

TEST_CASE("pairwise_sqdist and bce_with_logits gradients") {
    Rng rng(43);
    fd_check({random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)},
             [](const std::vector<Var>& v) {
                 return ag::mean_all(ag::pairwise_sqdist(v[0], v[1]));
             });
    Tensor z = random_tensor({2, 5}, rng, -2, 2);
    Tensor target({2, 5});
    for (int64_t i = 0; i < target.numel(); ++i) target.data()[i] = (i % 3 == 0) ? 1.0 : 0.0;
    fd_check({z}, [&](const std::vector<Var>& v) {
        return ag::bce_with_logits(v[0], ag::constant(target));
    });
}

TEST_CASE("cross_entropy_with_logits gradient and value") {
    Rng rng(47);
    Tensor z = random_tensor({4, 3}, rng, -2, 2);
    std::vector<int> labels = {0, 2, 1, 2};
    fd_check({z}, [&](const std::vector<Var>& v) {
        return ag::cross_entropy_with_logits(v[0], labels);
    });
    // uniform logits -> loss = log(K)
    Var u = ag::cross_entropy_with_logits(ag::constant(Tensor::zeros({5, 4})), {0, 1, 2, 3, 0});
    CHECK(u.value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("grad accumulates across shared subexpressions") {
    Tensor a = Tensor::from({2}, {0.7, -0.4});
    fd_check({a}, [](const std::vector<Var>& v) {
        Var s = ag::mul(v[0], v[0]);
        return ag::sum_all(ag::add(s, ag::mul_scalar(v[0], 3.0)));
    });
}

TEST_CASE("no-grad mode builds no tape") {
    Var p = ag::param(Tensor::from({2}, {1.0, 2.0}));
    {
        ag::NoGradGuard ng;
        Var y = ag::mul(p, p);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.n->parents.empty());
    }
    Var y = ag::mul(p, p);
    CHECK(y.requires_grad());
}

TEST_CASE("AdamW decreases a quadratic and weight decay shrinks params") {
    nn::ParamSet ps;
    Var x = ps.add("x", Tensor::from({2}, {5.0, -3.0}));
    nn::AdamW opt(ps, 0.0);
    auto loss_value = [&]() {
        Var l = ag::mean_all(ag::mul(x, x));
        return l;
    };
    double first = loss_value().value()[0];
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        Var l = loss_value();
        ag::backward(l);
        opt.step(0.1);
    }
    CHECK(loss_value().value()[0] < first * 1e-3);
}

TEST_CASE("warmup-cosine schedule shape") {
    nn::WarmupCosine sched{5e-4, 100, 0.1};
    CHECK(sched.warmup_steps() == 10);
    CHECK(sched.at(0) < sched.at(9));
    CHECK(sched.at(9) == doctest::Approx(5e-4));
    CHECK(sched.at(50) < sched.at(10));
    CHECK(sched.at(99) < 1e-6);
}
