#include "bcsam/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace bcsam::ag {

namespace {

thread_local int g_no_grad_depth = 0;

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

bool any_requires_grad(const std::vector<Var>& vs) {
    for (const auto& v : vs)
        if (v.defined() && v.n->requires_grad) return true;
    return false;
}

// Creates a node for `value`; wires parents/backfn only when grads flow.
Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(const Tensor&)> backfn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (grad_enabled() && any_requires_grad(parents)) {
        node->requires_grad = true;
        for (auto& p : parents) node->parents.push_back(p.n);
        node->backfn = std::move(backfn);
    }
    return Var(node);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void Node::accumulate(const Tensor& g) {
    Tensor& acc = ensure_grad();
    const int64_t n = acc.numel();
    if (g.numel() != n) throw std::logic_error("grad accumulate: size mismatch");
    double* a = acc.data();
    const double* b = g.data();
    for (int64_t i = 0; i < n; ++i) a[i] += b[i];
}

Tensor& Node::ensure_grad() {
    if (!grad.defined()) grad = Tensor::zeros(value.shape());
    return grad;
}

Var param(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = grad_enabled();
    return Var(node);
}

Var constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    return Var(node);
}

Var scalar(double v) { return constant(Tensor::scalar(v)); }

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value().clone();
    const double* bp = b.value().data();
    double* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] += bp[i];
    return make_node(std::move(out), {a, b}, [a, b](const Tensor& g) {
        if (a.n->requires_grad) a.n->accumulate(g);
        if (b.n->requires_grad) b.n->accumulate(g);
    });
}

Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value().clone();
    const double* bp = b.value().data();
    double* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] -= bp[i];
    return make_node(std::move(out), {a, b}, [a, b](const Tensor& g) {
        if (a.n->requires_grad) a.n->accumulate(g);
        if (b.n->requires_grad) {
            Tensor& acc = b.n->ensure_grad();
            for (int64_t i = 0; i < g.numel(); ++i) acc.data()[i] -= g.data()[i];
        }
    });
}

Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value().clone();
    const double* bp = b.value().data();
    double* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] *= bp[i];
    return make_node(std::move(out), {a, b}, [a, b](const Tensor& g) {
        const int64_t n = g.numel();
        if (a.n->requires_grad) {
            Tensor& acc = a.n->ensure_grad();
            const double* bv = b.value().data();
            for (int64_t i = 0; i < n; ++i) acc.data()[i] += g.data()[i] * bv[i];
        }
        if (b.n->requires_grad) {
            Tensor& acc = b.n->ensure_grad();
            const double* av = a.value().data();
            for (int64_t i = 0; i < n; ++i) acc.data()[i] += g.data()[i] * av[i];
        }
    });
}

Var divv(Var a, Var b) {
    check_same_shape(a, b, "div");
    Tensor out = a.value().clone();
    const double* bp = b.value().data();
    double* op = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) op[i] /= bp[i];
    return make_node(std::move(out), {a, b}, [a, b](const Tensor& g) {
        const int64_t n = g.numel();
        const double* av = a.value().data();
        const double* bv = b.value().data();
        if (a.n->requires_grad) {
            Tensor& acc = a.n->ensure_grad();
            for (int64_t i = 0; i < n; ++i) acc.data()[i] += g.data()[i] / bv[i];
        }
        if (b.n->requires_grad) {
            Tensor& acc = b.n->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                acc.data()[i] -= g.data()[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

Var add_scalar(Var a, double s) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] += s;
    return make_node(std::move(out), {a}, [a](const Tensor& g) { a.n->accumulate(g); });
}

Var mul_scalar(Var a, double s) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] *= s;
    return make_node(std::move(out), {a}, [a, s](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) acc.data()[i] += g.data()[i] * s;
    });
}

Var expv(Var a) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = std::exp(out.data()[i]);
    Tensor saved = out;
    return make_node(std::move(out), {a}, [a, saved](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) acc.data()[i] += g.data()[i] * saved.data()[i];
    });
}

Var logv(Var a) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = std::log(out.data()[i]);
    return make_node(std::move(out), {a}, [a](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        const double* av = a.value().data();
        for (int64_t i = 0; i < g.numel(); ++i) acc.data()[i] += g.data()[i] / av[i];
    });
}

Var sigmoid(Var a) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double x = out.data()[i];
        out.data()[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                               : std::exp(x) / (1.0 + std::exp(x));
    }
    Tensor saved = out;
    return make_node(std::move(out), {a}, [a, saved](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double s = saved.data()[i];
            acc.data()[i] += g.data()[i] * s * (1.0 - s);
        }
    });
}

Var relu(Var a) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = std::max(0.0, out.data()[i]);
    return make_node(std::move(out), {a}, [a](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        const double* av = a.value().data();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (av[i] > 0) acc.data()[i] += g.data()[i];
    });
}

Var gelu(Var a) {
    Tensor out = a.value().clone();
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double x = out.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x / kSqrt2));
    }
    return make_node(std::move(out), {a}, [a](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        const double* av = a.value().data();
        for (int64_t i = 0; i < g.numel(); ++i) {
            const double x = av[i];
            const double cdf = 0.5 * (1.0 + std::erf(x / kSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            acc.data()[i] += g.data()[i] * (cdf + x * pdf);
        }
    });
}

// --------------------------------------------------------------------- shape

Var reshape(Var a, Shape s) {
    Tensor out = a.value().reshaped(std::move(s));
    Shape in_shape = a.value().shape();
    return make_node(std::move(out), {a}, [a, in_shape](const Tensor& g) {
        a.n->accumulate(g.reshaped(in_shape));
    });
}

namespace {

std::vector<int64_t> row_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

// out[i_perm] = in[i]; also used for the inverse in backward
Tensor permute_tensor(const Tensor& in, const std::vector<int>& dims) {
    const Shape& is = in.shape();
    Shape os(is.size());
    for (size_t i = 0; i < dims.size(); ++i) os[i] = is[static_cast<size_t>(dims[i])];
    Tensor out(os);
    const auto ist = row_strides(is);
    const auto ost = row_strides(os);
    const int64_t n = in.numel();
    const int r = in.rank();
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t flat = 0; flat < n; ++flat) {
        int64_t rem = flat;
        int64_t oflat = 0;
        for (int d = 0; d < r; ++d) {
            idx[static_cast<size_t>(d)] = rem / ist[static_cast<size_t>(d)];
            rem %= ist[static_cast<size_t>(d)];
        }
        for (int d = 0; d < r; ++d)
            oflat += idx[static_cast<size_t>(dims[static_cast<size_t>(d)])] * ost[static_cast<size_t>(d)];
        out.data()[oflat] = in.data()[flat];
    }
    return out;
}

}  // namespace

Var permute(Var a, const std::vector<int>& dims) {
    if (static_cast<int>(dims.size()) != a.value().rank())
        throw std::invalid_argument("permute: dims rank mismatch");
    Tensor out = permute_tensor(a.value(), dims);
    return make_node(std::move(out), {a}, [a, dims](const Tensor& g) {
        std::vector<int> inv(dims.size());
        for (size_t i = 0; i < dims.size(); ++i) inv[static_cast<size_t>(dims[i])] = static_cast<int>(i);
        a.n->accumulate(permute_tensor(g, inv));
    });
}

Var slice_rows(Var a, int64_t start, int64_t len) {
    const Shape& is = a.shape();
    if (is.empty() || start < 0 || start + len > is[0])
        throw std::invalid_argument("slice_rows: out of range");
    const int64_t row = a.value().numel() / is[0];
    Shape os = is;
    os[0] = len;
    Tensor out(os);
    std::copy(a.value().data() + start * row, a.value().data() + (start + len) * row, out.data());
    return make_node(std::move(out), {a}, [a, start, row](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        double* dst = acc.data() + start * row;
        for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g.data()[i];
    });
}

// ------------------------------------------------------------ linear algebra

Var matmul(Var a, Var b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0])
        throw std::invalid_argument("matmul: bad shapes " + shape_str(as) + " x " + shape_str(bs));
    const int64_t m = as[0], k = as[1], n = bs[1];
    Tensor out({m, n});
    out.mat(m, n) = a.value().mat(m, k) * b.value().mat(k, n);
    return make_node(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g) {
        if (a.n->requires_grad)
            a.n->ensure_grad().mat(m, k) += g.mat(m, n) * b.value().mat(k, n).transpose();
        if (b.n->requires_grad)
            b.n->ensure_grad().mat(k, n) += a.value().mat(m, k).transpose() * g.mat(m, n);
    });
}

Var bmm(Var a, Var b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1])
        throw std::invalid_argument("bmm: bad shapes " + shape_str(as) + " x " + shape_str(bs));
    const int64_t B = as[0], m = as[1], k = as[2], n = bs[2];
    Tensor out({B, m, n});
    for (int64_t i = 0; i < B; ++i) {
        Tensor::ConstMatMap am(a.value().data() + i * m * k, m, k);
        Tensor::ConstMatMap bmv(b.value().data() + i * k * n, k, n);
        Tensor::MatMap om(out.data() + i * m * n, m, n);
        om = am * bmv;
    }
    return make_node(std::move(out), {a, b}, [a, b, B, m, k, n](const Tensor& g) {
        for (int64_t i = 0; i < B; ++i) {
            Tensor::ConstMatMap gm(g.data() + i * m * n, m, n);
            if (a.n->requires_grad) {
                Tensor::ConstMatMap bmv(b.value().data() + i * k * n, k, n);
                Tensor::MatMap ga(a.n->ensure_grad().data() + i * m * k, m, k);
                ga += gm * bmv.transpose();
            }
            if (b.n->requires_grad) {
                Tensor::ConstMatMap am(a.value().data() + i * m * k, m, k);
                Tensor::MatMap gb(b.n->ensure_grad().data() + i * k * n, k, n);
                gb += am.transpose() * gm;
            }
        }
    });
}

Var linear(Var x, Var w, Var b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw std::invalid_argument("linear: bad shapes " + shape_str(xs) + ", w " + shape_str(ws));
    const int64_t n = xs[0], cin = xs[1], cout = ws[0];
    Tensor out({n, cout});
    out.mat(n, cout) = x.value().mat(n, cin) * w.value().mat(cout, cin).transpose();
    if (b.defined()) {
        if (b.value().numel() != cout) throw std::invalid_argument("linear: bias size");
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < cout; ++j) out.data()[i * cout + j] += b.value().data()[j];
    }
    std::vector<Var> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_node(std::move(out), std::move(parents), [x, w, b, n, cin, cout](const Tensor& g) {
        if (x.n->requires_grad)
            x.n->ensure_grad().mat(n, cin) += g.mat(n, cout) * w.value().mat(cout, cin);
        if (w.n->requires_grad)
            w.n->ensure_grad().mat(cout, cin) += g.mat(n, cout).transpose() * x.value().mat(n, cin);
        if (b.defined() && b.n->requires_grad) {
            Tensor& acc = b.n->ensure_grad();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < cout; ++j) acc.data()[j] += g.data()[i * cout + j];
        }
    });
}

// ----------------------------------------------------------------------- conv

namespace {

struct ConvGeom {
    int C, H, W;       // "image" side (gather source / scatter target)
    int kh, kw, stride, pad;
    int GH, GW;        // grid side (column index space)
};

// cols[(c*kh+ki)*kw+kj, gi*GW+gj] = img[c, gi*s-p+ki, gj*s-p+kj] (0 outside)
void im2col(const ConvGeom& g, const double* img, double* cols) {
    const int64_t cols_w = static_cast<int64_t>(g.GH) * g.GW;
    for (int c = 0; c < g.C; ++c)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                double* row = cols + ((static_cast<int64_t>(c) * g.kh + ki) * g.kw + kj) * cols_w;
                for (int gi = 0; gi < g.GH; ++gi) {
                    const int ii = gi * g.stride - g.pad + ki;
                    if (ii < 0 || ii >= g.H) {
                        std::fill(row + static_cast<int64_t>(gi) * g.GW,
                                  row + static_cast<int64_t>(gi + 1) * g.GW, 0.0);
                        continue;
                    }
                    for (int gj = 0; gj < g.GW; ++gj) {
                        const int jj = gj * g.stride - g.pad + kj;
                        row[static_cast<int64_t>(gi) * g.GW + gj] =
                            (jj < 0 || jj >= g.W) ? 0.0
                            : img[(static_cast<int64_t>(c) * g.H + ii) * g.W + jj];
                    }
                }
            }
}

// adjoint of im2col: img[c, gi*s-p+ki, gj*s-p+kj] += cols[...]
void col2im(const ConvGeom& g, const double* cols, double* img) {
    const int64_t cols_w = static_cast<int64_t>(g.GH) * g.GW;
    for (int c = 0; c < g.C; ++c)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                const double* row = cols + ((static_cast<int64_t>(c) * g.kh + ki) * g.kw + kj) * cols_w;
                for (int gi = 0; gi < g.GH; ++gi) {
                    const int ii = gi * g.stride - g.pad + ki;
                    if (ii < 0 || ii >= g.H) continue;
                    for (int gj = 0; gj < g.GW; ++gj) {
                        const int jj = gj * g.stride - g.pad + kj;
                        if (jj < 0 || jj >= g.W) continue;
                        img[(static_cast<int64_t>(c) * g.H + ii) * g.W + jj] +=
                            row[static_cast<int64_t>(gi) * g.GW + gj];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw std::invalid_argument("conv2d: bad shapes x " + shape_str(xs) + " w " + shape_str(ws));
    const int N = static_cast<int>(xs[0]), Cin = static_cast<int>(xs[1]);
    const int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
    const int Cout = static_cast<int>(ws[0]), kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (W + 2 * pad - kw) / stride + 1;
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: empty output");
    const ConvGeom geom{Cin, H, W, kh, kw, stride, pad, OH, OW};
    const int64_t krows = static_cast<int64_t>(Cin) * kh * kw;
    const int64_t spatial = static_cast<int64_t>(OH) * OW;

    Tensor out({N, Cout, OH, OW});
    Tensor cols({krows, spatial});
    for (int n = 0; n < N; ++n) {
        im2col(geom, x.value().data() + static_cast<int64_t>(n) * Cin * H * W, cols.data());
        Tensor::MatMap om(out.data() + static_cast<int64_t>(n) * Cout * spatial, Cout, spatial);
        om = w.value().mat(Cout, krows) * cols.mat(krows, spatial);
        if (b.defined())
            for (int c = 0; c < Cout; ++c)
                om.row(c).array() += b.value().data()[c];
    }
    std::vector<Var> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_node(std::move(out), std::move(parents),
                     [x, w, b, N, Cin, H, W, Cout, geom, krows, spatial](const Tensor& g) {
        Tensor cols({krows, spatial});
        Tensor gcols({krows, spatial});
        for (int n = 0; n < N; ++n) {
            Tensor::ConstMatMap gm(g.data() + static_cast<int64_t>(n) * Cout * spatial, Cout, spatial);
            if (w.n->requires_grad) {
                im2col(geom, x.value().data() + static_cast<int64_t>(n) * Cin * H * W, cols.data());
                w.n->ensure_grad().mat(Cout, krows) += gm * cols.mat(krows, spatial).transpose();
            }
            if (x.n->requires_grad) {
                gcols.mat(krows, spatial) = w.value().mat(Cout, krows).transpose() * gm;
                col2im(geom, gcols.data(),
                       x.n->ensure_grad().data() + static_cast<int64_t>(n) * Cin * H * W);
            }
            if (b.defined() && b.n->requires_grad) {
                Tensor& acc = b.n->ensure_grad();
                for (int c = 0; c < Cout; ++c) acc.data()[c] += gm.row(c).sum();
            }
        }
    });
}

Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
        throw std::invalid_argument("conv_transpose2d: bad shapes x " + shape_str(xs) + " w " + shape_str(ws));
    const int N = static_cast<int>(xs[0]), Cin = static_cast<int>(xs[1]);
    const int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
    const int Cout = static_cast<int>(ws[1]), kh = static_cast<int>(ws[2]), kw = static_cast<int>(ws[3]);
    const int OH = (H - 1) * stride - 2 * pad + kh;
    const int OW = (W - 1) * stride - 2 * pad + kw;
    if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv_transpose2d: empty output");
    // image side is the *output*; the grid is the input lattice
    const ConvGeom geom{Cout, OH, OW, kh, kw, stride, pad, H, W};
    const int64_t krows = static_cast<int64_t>(Cout) * kh * kw;
    const int64_t spatial = static_cast<int64_t>(H) * W;
    const int64_t out_spatial = static_cast<int64_t>(OH) * OW;

    Tensor out({N, Cout, OH, OW});
    Tensor cols({krows, spatial});
    for (int n = 0; n < N; ++n) {
        Tensor::ConstMatMap xm(x.value().data() + static_cast<int64_t>(n) * Cin * spatial, Cin, spatial);
        cols.mat(krows, spatial) = w.value().mat(Cin, krows).transpose() * xm;
        col2im(geom, cols.data(), out.data() + static_cast<int64_t>(n) * Cout * out_spatial);
        if (b.defined()) {
            double* op = out.data() + static_cast<int64_t>(n) * Cout * out_spatial;
            for (int c = 0; c < Cout; ++c)
                for (int64_t i = 0; i < out_spatial; ++i) op[c * out_spatial + i] += b.value().data()[c];
        }
    }
    std::vector<Var> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    return make_node(std::move(out), std::move(parents),
                     [x, w, b, N, Cin, Cout, geom, krows, spatial, out_spatial](const Tensor& g) {
        Tensor gcols({krows, spatial});
        for (int n = 0; n < N; ++n) {
            im2col(geom, g.data() + static_cast<int64_t>(n) * Cout * out_spatial, gcols.data());
            if (x.n->requires_grad) {
                Tensor::MatMap gx(x.n->ensure_grad().data() + static_cast<int64_t>(n) * Cin * spatial,
                                  Cin, spatial);
                gx += w.value().mat(Cin, krows) * gcols.mat(krows, spatial);
            }
            if (w.n->requires_grad) {
                Tensor::ConstMatMap xm(x.value().data() + static_cast<int64_t>(n) * Cin * spatial,
                                       Cin, spatial);
                w.n->ensure_grad().mat(Cin, krows) += xm * gcols.mat(krows, spatial).transpose();
            }
            if (b.defined() && b.n->requires_grad) {
                Tensor& acc = b.n->ensure_grad();
                const double* gp = g.data() + static_cast<int64_t>(n) * Cout * out_spatial;
                for (int c = 0; c < Cout; ++c)
                    for (int64_t i = 0; i < out_spatial; ++i) acc.data()[c] += gp[c * out_spatial + i];
            }
        }
    });
}

Var add_channel_bias(Var x, Var v) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || v.value().numel() != xs[1])
        throw std::invalid_argument("add_channel_bias: bad shapes");
    const int64_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor out = x.value().clone();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            double* p = out.data() + (n * C + c) * HW;
            const double b = v.value().data()[c];
            for (int64_t i = 0; i < HW; ++i) p[i] += b;
        }
    return make_node(std::move(out), {x, v}, [x, v, N, C, HW](const Tensor& g) {
        if (x.n->requires_grad) x.n->accumulate(g);
        if (v.n->requires_grad) {
            Tensor& acc = v.n->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const double* p = g.data() + (n * C + c) * HW;
                    double s = 0;
                    for (int64_t i = 0; i < HW; ++i) s += p[i];
                    acc.data()[c] += s;
                }
        }
    });
}

// ------------------------------------------------------- layer norm / softmax

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    const Shape& xs = x.shape();
    const int64_t D = xs.back();
    const int64_t R = x.value().numel() / D;
    if (gamma.value().numel() != D || beta.value().numel() != D)
        throw std::invalid_argument("layer_norm: gamma/beta size");
    Tensor out(xs);
    Tensor xhat(xs);
    Tensor inv({R});
    for (int64_t r = 0; r < R; ++r) {
        const double* xp = x.value().data() + r * D;
        double mu = 0;
        for (int64_t d = 0; d < D; ++d) mu += xp[d];
        mu /= static_cast<double>(D);
        double var = 0;
        for (int64_t d = 0; d < D; ++d) var += (xp[d] - mu) * (xp[d] - mu);
        var /= static_cast<double>(D);
        const double iv = 1.0 / std::sqrt(var + eps);
        inv.data()[r] = iv;
        for (int64_t d = 0; d < D; ++d) {
            const double xh = (xp[d] - mu) * iv;
            xhat.data()[r * D + d] = xh;
            out.data()[r * D + d] = gamma.value().data()[d] * xh + beta.value().data()[d];
        }
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv, R, D](const Tensor& g) {
        if (gamma.n->requires_grad) {
            Tensor& acc = gamma.n->ensure_grad();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t d = 0; d < D; ++d)
                    acc.data()[d] += g.data()[r * D + d] * xhat.data()[r * D + d];
        }
        if (beta.n->requires_grad) {
            Tensor& acc = beta.n->ensure_grad();
            for (int64_t r = 0; r < R; ++r)
                for (int64_t d = 0; d < D; ++d) acc.data()[d] += g.data()[r * D + d];
        }
        if (x.n->requires_grad) {
            Tensor& acc = x.n->ensure_grad();
            for (int64_t r = 0; r < R; ++r) {
                double mg = 0, mgx = 0;
                for (int64_t d = 0; d < D; ++d) {
                    const double gh = g.data()[r * D + d] * gamma.value().data()[d];
                    mg += gh;
                    mgx += gh * xhat.data()[r * D + d];
                }
                mg /= static_cast<double>(D);
                mgx /= static_cast<double>(D);
                const double iv = inv.data()[r];
                for (int64_t d = 0; d < D; ++d) {
                    const double gh = g.data()[r * D + d] * gamma.value().data()[d];
                    acc.data()[r * D + d] += iv * (gh - mg - xhat.data()[r * D + d] * mgx);
                }
            }
        }
    });
}

Var softmax_lastdim(Var x) {
    const Shape& xs = x.shape();
    const int64_t D = xs.back();
    const int64_t R = x.value().numel() / D;
    Tensor out(xs);
    for (int64_t r = 0; r < R; ++r) {
        const double* xp = x.value().data() + r * D;
        double* op = out.data() + r * D;
        double mx = xp[0];
        for (int64_t d = 1; d < D; ++d) mx = std::max(mx, xp[d]);
        double z = 0;
        for (int64_t d = 0; d < D; ++d) {
            op[d] = std::exp(xp[d] - mx);
            z += op[d];
        }
        for (int64_t d = 0; d < D; ++d) op[d] /= z;
    }
    Tensor saved = out;
    return make_node(std::move(out), {x}, [x, saved, R, D](const Tensor& g) {
        Tensor& acc = x.n->ensure_grad();
        for (int64_t r = 0; r < R; ++r) {
            const double* yp = saved.data() + r * D;
            const double* gp = g.data() + r * D;
            double dot = 0;
            for (int64_t d = 0; d < D; ++d) dot += gp[d] * yp[d];
            for (int64_t d = 0; d < D; ++d) acc.data()[r * D + d] += yp[d] * (gp[d] - dot);
        }
    });
}

// ---------------------------------------------------------------- reductions

Var sum_all(Var a) {
    double s = 0;
    for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value().data()[i];
    return make_node(Tensor::scalar(s), {a}, [a](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        const double gv = g.data()[0];
        for (int64_t i = 0; i < acc.numel(); ++i) acc.data()[i] += gv;
    });
}

Var mean_all(Var a) {
    const double n = static_cast<double>(a.value().numel());
    double s = 0;
    for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value().data()[i];
    return make_node(Tensor::scalar(s / n), {a}, [a, n](const Tensor& g) {
        Tensor& acc = a.n->ensure_grad();
        const double gv = g.data()[0] / n;
        for (int64_t i = 0; i < acc.numel(); ++i) acc.data()[i] += gv;
    });
}

Var gap(Var x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("gap: expects NCHW");
    const int64_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
    Tensor out({N, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double* p = x.value().data() + (n * C + c) * HW;
            double s = 0;
            for (int64_t i = 0; i < HW; ++i) s += p[i];
            out.data()[n * C + c] = s / static_cast<double>(HW);
        }
    return make_node(std::move(out), {x}, [x, N, C, HW](const Tensor& g) {
        Tensor& acc = x.n->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) {
                const double gv = g.data()[n * C + c] / static_cast<double>(HW);
                double* p = acc.data() + (n * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) p[i] += gv;
            }
    });
}

// ----------------------------------------------------------------- image ops

namespace {

// reflect-101 (no edge repeat); degenerates to clamp for size 1
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace

Var reflect_pad2d(Var x, int p) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("reflect_pad2d: expects NCHW");
    const int64_t N = xs[0], C = xs[1];
    const int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
    const int OH = H + 2 * p, OW = W + 2 * p;
    Tensor out({N, C, OH, OW});
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* src = x.value().data() + nc * H * W;
        double* dst = out.data() + nc * static_cast<int64_t>(OH) * OW;
        for (int i = 0; i < OH; ++i) {
            const int si = reflect_index(i - p, H);
            for (int j = 0; j < OW; ++j)
                dst[static_cast<int64_t>(i) * OW + j] = src[static_cast<int64_t>(si) * W + reflect_index(j - p, W)];
        }
    }
    return make_node(std::move(out), {x}, [x, p, N, C, H, W](const Tensor& g) {
        const int OH = H + 2 * p, OW = W + 2 * p;
        Tensor& acc = x.n->ensure_grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            double* dst = acc.data() + nc * H * W;
            const double* src = g.data() + nc * static_cast<int64_t>(OH) * OW;
            for (int i = 0; i < OH; ++i) {
                const int si = reflect_index(i - p, H);
                for (int j = 0; j < OW; ++j)
                    dst[static_cast<int64_t>(si) * W + reflect_index(j - p, W)] +=
                        src[static_cast<int64_t>(i) * OW + j];
            }
        }
    });
}

Var conv1d_w_fixed(Var x, const std::vector<double>& k) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("conv1d_w_fixed: expects NCHW");
    const int64_t NC = xs[0] * xs[1];
    const int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
    const int L = static_cast<int>(k.size());
    const int OW = W - L + 1;
    if (OW <= 0) throw std::invalid_argument("conv1d_w_fixed: kernel wider than input");
    Tensor out({xs[0], xs[1], H, OW});
    for (int64_t nc = 0; nc < NC; ++nc)
        for (int i = 0; i < H; ++i) {
            const double* src = x.value().data() + (nc * H + i) * W;
            double* dst = out.data() + (nc * H + i) * OW;
            for (int j = 0; j < OW; ++j) {
                double s = 0;
                for (int t = 0; t < L; ++t) s += k[static_cast<size_t>(t)] * src[j + t];
                dst[j] = s;
            }
        }
    return make_node(std::move(out), {x}, [x, k, NC, H, W, OW](const Tensor& g) {
        const int L = static_cast<int>(k.size());
        Tensor& acc = x.n->ensure_grad();
        for (int64_t nc = 0; nc < NC; ++nc)
            for (int i = 0; i < H; ++i) {
                double* dst = acc.data() + (nc * H + i) * W;
                const double* src = g.data() + (nc * H + i) * OW;
                for (int j = 0; j < OW; ++j)
                    for (int t = 0; t < L; ++t) dst[j + t] += k[static_cast<size_t>(t)] * src[j];
            }
    });
}

Var conv1d_h_fixed(Var x, const std::vector<double>& k) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("conv1d_h_fixed: expects NCHW");
    const int64_t NC = xs[0] * xs[1];
    const int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
    const int L = static_cast<int>(k.size());
    const int OH = H - L + 1;
    if (OH <= 0) throw std::invalid_argument("conv1d_h_fixed: kernel taller than input");
    Tensor out({xs[0], xs[1], OH, W});
    for (int64_t nc = 0; nc < NC; ++nc) {
        const double* src = x.value().data() + nc * H * W;
        double* dst = out.data() + nc * static_cast<int64_t>(OH) * W;
        for (int i = 0; i < OH; ++i)
            for (int j = 0; j < W; ++j) {
                double s = 0;
                for (int t = 0; t < L; ++t) s += k[static_cast<size_t>(t)] * src[(i + t) * W + j];
                dst[static_cast<int64_t>(i) * W + j] = s;
            }
    }
    return make_node(std::move(out), {x}, [x, k, NC, H, W, OH](const Tensor& g) {
        const int L = static_cast<int>(k.size());
        Tensor& acc = x.n->ensure_grad();
        for (int64_t nc = 0; nc < NC; ++nc) {
            double* dst = acc.data() + nc * H * W;
            const double* src = g.data() + nc * static_cast<int64_t>(OH) * W;
            for (int i = 0; i < OH; ++i)
                for (int j = 0; j < W; ++j)
                    for (int t = 0; t < L; ++t)
                        dst[(i + t) * W + j] += k[static_cast<size_t>(t)] * src[static_cast<int64_t>(i) * W + j];
        }
    });
}

Var bilinear_resize(Var x, int out_h, int out_w) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw std::invalid_argument("bilinear_resize: expects NCHW");
    const int64_t NC = xs[0] * xs[1];
    const int H = static_cast<int>(xs[2]), W = static_cast<int>(xs[3]);
    Tensor out({xs[0], xs[1], out_h, out_w});
    auto coords = [](int o, int n, int in_n, double* w0, int* i0, int* i1) {
        double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_n) / static_cast<double>(n) - 0.5;
        src = std::max(0.0, std::min(src, static_cast<double>(in_n - 1)));
        *i0 = static_cast<int>(src);
        *i1 = std::min(*i0 + 1, in_n - 1);
        *w0 = 1.0 - (src - static_cast<double>(*i0));
    };
    for (int64_t nc = 0; nc < NC; ++nc) {
        const double* src = x.value().data() + nc * H * W;
        double* dst = out.data() + nc * static_cast<int64_t>(out_h) * out_w;
        for (int i = 0; i < out_h; ++i) {
            double wy0;
            int y0, y1;
            coords(i, out_h, H, &wy0, &y0, &y1);
            for (int j = 0; j < out_w; ++j) {
                double wx0;
                int x0, x1;
                coords(j, out_w, W, &wx0, &x0, &x1);
                dst[static_cast<int64_t>(i) * out_w + j] =
                    wy0 * (wx0 * src[y0 * W + x0] + (1 - wx0) * src[y0 * W + x1]) +
                    (1 - wy0) * (wx0 * src[y1 * W + x0] + (1 - wx0) * src[y1 * W + x1]);
            }
        }
    }
    return make_node(std::move(out), {x}, [x, out_h, out_w, NC, H, W](const Tensor& g) {
        auto coords = [](int o, int n, int in_n, double* w0, int* i0, int* i1) {
            double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_n) / static_cast<double>(n) - 0.5;
            src = std::max(0.0, std::min(src, static_cast<double>(in_n - 1)));
            *i0 = static_cast<int>(src);
            *i1 = std::min(*i0 + 1, in_n - 1);
            *w0 = 1.0 - (src - static_cast<double>(*i0));
        };
        Tensor& acc = x.n->ensure_grad();
        for (int64_t nc = 0; nc < NC; ++nc) {
            double* dst = acc.data() + nc * H * W;
            const double* src = g.data() + nc * static_cast<int64_t>(out_h) * out_w;
            for (int i = 0; i < out_h; ++i) {
                double wy0;
                int y0, y1;
                coords(i, out_h, H, &wy0, &y0, &y1);
                for (int j = 0; j < out_w; ++j) {
                    double wx0;
                    int x0, x1;
                    coords(j, out_w, W, &wx0, &x0, &x1);
                    const double gv = src[static_cast<int64_t>(i) * out_w + j];
                    dst[y0 * W + x0] += gv * wy0 * wx0;
                    dst[y0 * W + x1] += gv * wy0 * (1 - wx0);
                    dst[y1 * W + x0] += gv * (1 - wy0) * wx0;
                    dst[y1 * W + x1] += gv * (1 - wy0) * (1 - wx0);
                }
            }
        }
    });
}

// ---------------------------------------------------------- distance / losses

Var pairwise_sqdist(Var x, Var y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    if (xs.size() != 2 || ys.size() != 2 || xs[1] != ys[1])
        throw std::invalid_argument("pairwise_sqdist: bad shapes");
    const int64_t n = xs[0], m = ys[0], d = xs[1];
    Tensor out({n, m});
    for (int64_t i = 0; i < n; ++i) {
        const double* xp = x.value().data() + i * d;
        for (int64_t j = 0; j < m; ++j) {
            const double* yp = y.value().data() + j * d;
            double s = 0;
            for (int64_t t = 0; t < d; ++t) {
                const double diff = xp[t] - yp[t];
                s += diff * diff;
            }
            out.data()[i * m + j] = s;
        }
    }
    return make_node(std::move(out), {x, y}, [x, y, n, m, d](const Tensor& g) {
        for (int64_t i = 0; i < n; ++i) {
            const double* xp = x.value().data() + i * d;
            for (int64_t j = 0; j < m; ++j) {
                const double* yp = y.value().data() + j * d;
                const double gv = 2.0 * g.data()[i * m + j];
                if (gv == 0.0) continue;
                if (x.n->requires_grad) {
                    double* gx = x.n->ensure_grad().data() + i * d;
                    for (int64_t t = 0; t < d; ++t) gx[t] += gv * (xp[t] - yp[t]);
                }
                if (y.n->requires_grad) {
                    double* gy = y.n->ensure_grad().data() + j * d;
                    for (int64_t t = 0; t < d; ++t) gy[t] -= gv * (xp[t] - yp[t]);
                }
            }
        }
    });
}

Var bce_with_logits(Var z, Var t) {
    check_same_shape(z, t, "bce_with_logits");
    const int64_t n = z.value().numel();
    double loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double zi = z.value().data()[i];
        const double ti = t.value().data()[i];
        loss += std::max(zi, 0.0) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
    }
    loss /= static_cast<double>(n);
    return make_node(Tensor::scalar(loss), {z, t}, [z, t, n](const Tensor& g) {
        if (!z.n->requires_grad) return;
        Tensor& acc = z.n->ensure_grad();
        const double gv = g.data()[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double zi = z.value().data()[i];
            const double s = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi))
                                     : std::exp(zi) / (1.0 + std::exp(zi));
            acc.data()[i] += gv * (s - t.value().data()[i]);
        }
    });
}

Var cross_entropy_with_logits(Var z, const std::vector<int>& labels) {
    const Shape& zs = z.shape();
    if (zs.size() != 2 || static_cast<int64_t>(labels.size()) != zs[0])
        throw std::invalid_argument("cross_entropy_with_logits: bad shapes");
    const int64_t n = zs[0], k = zs[1];
    for (int y : labels)
        if (y < 0 || y >= k) throw std::invalid_argument("cross_entropy_with_logits: label out of range");

    double loss = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = z.value().data() + i * k;
        double mx = row[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double lse = 0;
        for (int64_t j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
        loss += mx + std::log(lse) - row[labels[static_cast<size_t>(i)]];
    }
    loss /= static_cast<double>(n);
    return make_node(Tensor::scalar(loss), {z}, [z, labels, n, k](const Tensor& g) {
        Tensor& acc = z.n->ensure_grad();
        const double gv = g.data()[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double* row = z.value().data() + i * k;
            double mx = row[0];
            for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
            double lse = 0;
            for (int64_t j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
            for (int64_t j = 0; j < k; ++j) {
                const double p = std::exp(row[j] - mx) / lse;
                acc.data()[i * k + j] +=
                    gv * (p - (labels[static_cast<size_t>(i)] == j ? 1.0 : 0.0));
            }
        }
    });
}

// ------------------------------------------------------------------- backward

void backward(Var loss) {
    if (!loss.defined() || loss.value().numel() != 1)
        throw std::invalid_argument("backward: loss must be a defined scalar");
    if (!loss.n->requires_grad) return;

    // iterative postorder DFS; valid topological order for a DAG
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.n.get(), 0);
    visited.insert(loss.n.get());
    while (!stack.empty()) {
        Node* node = stack.back().first;
        size_t& next = stack.back().second;
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);  // invalidates `next`; re-fetch next iteration
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    loss.n->ensure_grad().data()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backfn && node->grad.defined()) node->backfn(node->grad);
    }
}

}  // namespace bcsam::ag
