#pragma once

// Promptable-segmentation backbone: a plain ViT image encoder (patch embed,
// learned positional embeddings, pre-norm transformer blocks, a 1x1 conv neck
// projecting tokens to the embedding channels). The backbone itself is always
// frozen; adaptation happens through LoRA on the attention projections, and
// the prompt encoder / mask decoder heads are trained directly.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bcsam/tensor.hpp"

namespace bcsam {

struct BackboneSpec {
    std::string name;
    int img_size = 0;      // native input resolution
    int patch = 16;
    int width = 0;         // token dimension
    int depth = 0;         // transformer blocks
    int heads = 0;
    int mlp_ratio = 4;
    int emb_channels = 0;  // neck output channels

    int tokens_per_side() const { return img_size / patch; }
    int token_count() const { return tokens_per_side() * tokens_per_side(); }
    Shape embedding_shape() const {
        return {emb_channels, tokens_per_side(), tokens_per_side()};
    }

    static BackboneSpec vit_b();     // 12 blocks, width 768, 1024px, 256ch embeddings
    static BackboneSpec vit_tiny();  // 2 blocks, width 64, 256px, 32ch embeddings
    static BackboneSpec by_name(const std::string& name);  // throws on unknown
};

// Frozen pretrained tensors, keyed by canonical names ("blocks.3.attn.q.w", ...).
struct BackboneWeights {
    BackboneSpec spec;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    uint64_t checksum() const;  // over every tensor's raw bytes, in name order

    // Random-init stand-in for a pretrained checkpoint (the real SAM weights
    // are converted offline into this same container).
    static BackboneWeights random_init(const BackboneSpec& spec, uint64_t seed);

    void save(const std::string& path) const;
    static BackboneWeights load(const std::string& path);  // throws missing/corrupt
};

// Names of the tensors a backbone of this spec must provide.
std::vector<std::string> backbone_tensor_names(const BackboneSpec& spec);

}  // namespace bcsam
