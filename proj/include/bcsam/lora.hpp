#pragma once

// Low-rank adapter algebra: a frozen weight W is adapted as W + B*A with
// B (c_out x r) and A (r x c_in), r << min(c_in, c_out). B starts at zero so
// the adapted layer initially equals the frozen one. No alpha/r scaling is
// applied; the update is literally B*A.

#include <cstdint>
#include <string>

#include "bcsam/tensor.hpp"

namespace bcsam {

struct LoRAAdapter {
    Tensor A;  // (r, c_in)
    Tensor B;  // (c_out, r)
    int64_t r = 0;
    std::string target_id;

    int64_t c_in() const { return A.dim(1); }
    int64_t c_out() const { return B.dim(0); }
    int64_t trainable_param_count() const { return r * (c_in() + c_out()); }
};

// A ~ Gaussian(0, 1/r) entries, B = 0. Throws if r < 1 or r > min(c_in, c_out).
LoRAAdapter init_adapter(int64_t c_in, int64_t c_out, int64_t r, uint64_t seed,
                         std::string target_id = "");

// W + B*A, computed exactly. W is (c_out, c_in).
Tensor merge_weights(const Tensor& w, const LoRAAdapter& adapter);

// W*x + B*(A*x) without materializing the merged weight.
// x is (c_in) or (c_in, n) column-major samples; result matches x's layout.
Tensor adapted_forward(const Tensor& x, const Tensor& w, const LoRAAdapter& adapter);

void save_adapter(const LoRAAdapter& adapter, const std::string& path);
LoRAAdapter load_adapter(const std::string& path);

}  // namespace bcsam
