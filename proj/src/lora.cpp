#include "bcsam/lora.hpp"

#include <cmath>
#include <stdexcept>

#include "bcsam/rng.hpp"
#include "bcsam/tensor_archive.hpp"

namespace bcsam {

LoRAAdapter init_adapter(int64_t c_in, int64_t c_out, int64_t r, uint64_t seed,
                         std::string target_id) {
    if (r < 1) throw std::invalid_argument("init_adapter: rank must be >= 1");
    if (r > std::min(c_in, c_out))
        throw std::invalid_argument("init_adapter: rank " + std::to_string(r) +
                                    " exceeds min(c_in, c_out) = " +
                                    std::to_string(std::min(c_in, c_out)));
    LoRAAdapter a;
    a.r = r;
    a.target_id = std::move(target_id);
    Rng rng(seed);
    a.A = Tensor({r, c_in});
    const double stddev = 1.0 / std::sqrt(static_cast<double>(r));
    for (int64_t i = 0; i < a.A.numel(); ++i) a.A.data()[i] = rng.normal(0.0, stddev);
    a.B = Tensor::zeros({c_out, r});
    return a;
}

Tensor merge_weights(const Tensor& w, const LoRAAdapter& adapter) {
    if (w.rank() != 2 || w.dim(0) != adapter.c_out() || w.dim(1) != adapter.c_in())
        throw std::invalid_argument("merge_weights: W shape " + shape_str(w.shape()) +
                                    " does not match adapter (" + std::to_string(adapter.c_out()) +
                                    "," + std::to_string(adapter.c_in()) + ")");
    const int64_t co = adapter.c_out(), ci = adapter.c_in(), r = adapter.r;
    Tensor out = w.clone();
    out.mat(co, ci) += adapter.B.mat(co, r) * adapter.A.mat(r, ci);
    return out;
}

Tensor adapted_forward(const Tensor& x, const Tensor& w, const LoRAAdapter& adapter) {
    const int64_t ci = adapter.c_in(), co = adapter.c_out(), r = adapter.r;
    if (w.rank() != 2 || w.dim(0) != co || w.dim(1) != ci)
        throw std::invalid_argument("adapted_forward: W shape mismatch");
    const bool is_vec = x.rank() == 1;
    const int64_t n = is_vec ? 1 : x.dim(1);
    if (x.dim(0) != ci)
        throw std::invalid_argument("adapted_forward: x has " + std::to_string(x.dim(0)) +
                                    " features, adapter expects " + std::to_string(ci));
    Tensor out = is_vec ? Tensor({co}) : Tensor({co, n});
    auto xm = x.mat(ci, n);
    Tensor ax({r, n});
    ax.mat(r, n) = adapter.A.mat(r, ci) * xm;
    out.mat(co, n) = w.mat(co, ci) * xm + adapter.B.mat(co, r) * ax.mat(r, n);
    return out;
}

void save_adapter(const LoRAAdapter& adapter, const std::string& path) {
    TensorArchive ar;
    ar.meta = {{"kind", "lora_adapter"},
               {"target_id", adapter.target_id},
               {"r", adapter.r},
               {"c_in", adapter.c_in()},
               {"c_out", adapter.c_out()}};
    ar.add("A", adapter.A);
    ar.add("B", adapter.B);
    ar.save(path);
}

LoRAAdapter load_adapter(const std::string& path) {
    TensorArchive ar = TensorArchive::load(path);
    if (ar.meta.value("kind", "") != "lora_adapter")
        throw std::runtime_error("load_adapter: not an adapter checkpoint: " + path);
    LoRAAdapter a;
    a.r = ar.meta.at("r").get<int64_t>();
    a.target_id = ar.meta.at("target_id").get<std::string>();
    a.A = ar.get("A");
    a.B = ar.get("B");
    if (a.A.rank() != 2 || a.B.rank() != 2 || a.A.dim(0) != a.r || a.B.dim(1) != a.r)
        throw std::runtime_error("load_adapter: inconsistent shapes in " + path);
    return a;
}

}  // namespace bcsam
