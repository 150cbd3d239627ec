#pragma once

// Reverse-mode automatic differentiation over bcsam::Tensor. The graph is
// built dynamically per forward pass; backward() runs the tape in reverse
// topological order. Every op's adjoint is verified against central finite
// differences in the test suite.

#include <functional>
#include <memory>
#include <vector>

#include "bcsam/tensor.hpp"

namespace bcsam::ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // undefined until first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(const Tensor& grad_out)> backfn;

    void accumulate(const Tensor& g);
    Tensor& ensure_grad();
};

// Thin shared handle to a graph node.
struct Var {
    NodePtr n;

    Var() = default;
    explicit Var(NodePtr p) : n(std::move(p)) {}

    bool defined() const { return static_cast<bool>(n); }
    const Tensor& value() const { return n->value; }
    const Shape& shape() const { return n->value.shape(); }
    bool requires_grad() const { return n && n->requires_grad; }
    const Tensor& grad() const { return n->grad; }
};

// Leaf constructors. A parameter shares storage with `t`, so optimizer
// updates are visible to subsequent forward passes.
Var param(Tensor t);
Var constant(Tensor t);
Var scalar(double v);

bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// --- elementwise ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divv(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var expv(Var a);
Var logv(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var gelu(Var a);

// --- shape ---
Var reshape(Var a, Shape s);
Var permute(Var a, const std::vector<int>& dims);
Var slice_rows(Var a, int64_t start, int64_t len);

// --- linear algebra ---
Var matmul(Var a, Var b);                 // (M,K) x (K,N)
Var bmm(Var a, Var b);                    // (B,M,K) x (B,K,N)
Var linear(Var x, Var w, Var b = Var{});  // (N,Cin) x (Cout,Cin)^T + b

// --- convolution, NCHW ---
Var conv2d(Var x, Var w, Var b, int stride, int pad);            // w: (Cout,Cin,kh,kw)
Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad);  // w: (Cin,Cout,kh,kw)
Var add_channel_bias(Var x, Var v);  // (N,C,H,W) + (C)

// --- normalization / attention pieces ---
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);  // over last dim
Var softmax_lastdim(Var x);

// --- reductions ---
Var sum_all(Var a);
Var mean_all(Var a);
Var gap(Var x);  // (N,C,H,W) -> (N,C)

// --- image ops ---
Var reflect_pad2d(Var x, int p);                      // reflect-101 borders
Var conv1d_w_fixed(Var x, const std::vector<double>& k);  // valid, along W
Var conv1d_h_fixed(Var x, const std::vector<double>& k);  // valid, along H
Var bilinear_resize(Var x, int out_h, int out_w);     // half-pixel convention

// --- distance / losses ---
Var pairwise_sqdist(Var x, Var y);    // (n,d),(m,d) -> (n,m)
Var bce_with_logits(Var z, Var t);    // mean over elements -> (1)
Var cross_entropy_with_logits(Var z, const std::vector<int>& labels);  // (n,K) -> (1)

// Runs the tape. `loss` must be scalar (numel == 1).
void backward(Var loss);

}  // namespace bcsam::ag
