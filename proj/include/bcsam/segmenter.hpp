#pragma once

// LoRA-adapted segmentation wrapper: injects rank-r adapters into the frozen
// backbone's attention projections, fine-tunes the prompt encoder and mask
// decoder heads on the small mask-annotated subset, and emits one
// (embedding, mask) pair per cell image. Post-processing fills everything
// outside the mask with gray 128/255 and crops the minimal square around it.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bcsam/backbone.hpp"
#include "bcsam/dataset.hpp"
#include "bcsam/embedding_store.hpp"
#include "bcsam/lora.hpp"
#include "bcsam/nn.hpp"

namespace bcsam {

struct ImageEmbedding {
    Tensor features;  // (C, H', W')
    std::string image_id;
    DomainId domain = DomainId::matek19;
};

using SegmentationMask = MaskU8;  // 224x224, aligned to the CellImage grid

struct PostProcessedImage {
    ImageF image;  // square; gray 128/255 outside the mask
    std::string image_id;
    bool mask_empty = false;  // fallback: whole image, no gray fill
};

inline constexpr float kGrayFill = 128.f / 255.f;
inline constexpr int kMinCropSide = 32;

// (1) gray-fill outside the mask, (2) crop the minimal square covering the
// mask's bounding box (side >= kMinCropSide), centered on it, gray-padded
// where the square leaves the image. An empty mask returns the whole image
// untouched with mask_empty set.
PostProcessedImage postprocess_crop(const ImageF& image, const SegmentationMask& mask,
                                    const std::string& image_id = "");

struct LoRAConfig {
    int r = 4;
    std::vector<std::string> targets = {"q", "v"};  // attention projections
};

// Pure counting helpers for a given injection policy.
int adapter_count(const BackboneSpec& spec, const std::vector<std::string>& targets);
int64_t adapter_param_total(const BackboneSpec& spec, const LoRAConfig& cfg);

// Abstract embedder so the pipeline can run with the adapted backbone or the
// training-free stub.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::pair<ImageEmbedding, SegmentationMask> embed_and_segment(
        const CellImage& image) const = 0;
    virtual Shape embedding_shape() const = 0;
    virtual std::string describe() const = 0;
};

class AdaptedBackbone : public Embedder {
public:
    // Loads frozen weights from disk and attaches fresh adapters + heads.
    static std::unique_ptr<AdaptedBackbone> attach(const std::string& weights_path,
                                                   const LoRAConfig& cfg, uint64_t seed);

    const BackboneSpec& spec() const { return spec_; }
    const LoRAConfig& lora_config() const { return lora_cfg_; }
    size_t adapter_pair_count() const { return adapter_a_.size(); }
    nn::ParamSet& trainable() { return trainable_; }
    uint64_t frozen_checksum() const { return frozen_.checksum(); }

    // Token path with adapters; exposed for tests. Image must be (3,224,224).
    ag::Var forward_embedding(const Tensor& cell_image) const;  // (1,C,H',W')
    ag::Var forward_mask_logits(ag::Var embedding) const;       // (1,1,224,224)

    std::pair<ImageEmbedding, SegmentationMask> embed_and_segment(
        const CellImage& image) const override;
    Shape embedding_shape() const override { return spec_.embedding_shape(); }
    std::string describe() const override { return "lora-" + spec_.name; }

    void save_checkpoint(const std::string& path, const nlohmann::json& extra_meta) const;
    void load_trainable(const std::string& path);  // restores adapters + heads

    // exports one adapter in the portable single-adapter format
    LoRAAdapter adapter_snapshot(const std::string& target_id) const;

private:
    BackboneSpec spec_;
    BackboneWeights frozen_;
    LoRAConfig lora_cfg_;
    nn::ParamSet trainable_;
    std::map<std::string, ag::Var> adapter_a_, adapter_b_;  // by target id
    // prompt encoder MLP (point -> embedding-channel vector)
    nn::Linear prompt_fc1_, prompt_fc2_;
    // mask decoder
    nn::Conv2d dec_conv1_, dec_conv2_;
    nn::ConvTranspose2d dec_up1_, dec_up2_;
    bool use_point_prompt_ = true;

    AdaptedBackbone() = default;
    ag::Var attention_projection(ag::Var tokens, const std::string& block, const char* which) const;
};

struct SegTrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.05;
    int epochs = 85;
    double warmup_frac = 0.1;
    uint64_t seed = 0;
};

struct SegTrainResult {
    std::vector<double> step_losses;
    std::vector<double> epoch_mean_loss;
    uint64_t frozen_checksum_before = 0;
    uint64_t frozen_checksum_after = 0;
};

// Mean of soft-Dice and per-pixel cross-entropy against binary masks.
// Throws on an empty set or a non-binary mask. Frozen weights are untouched
// (checksums recorded in the result and the checkpoint).
SegTrainResult finetune_segmentation(AdaptedBackbone& model,
                                     const std::vector<std::pair<CellImage, SegmentationMask>>& annotated,
                                     const SegTrainConfig& cfg,
                                     const std::string& checkpoint_path);

// Stratified-by-class random subset (fraction of each class, at least one),
// canonically ordered and seeded; the ids that must carry mask annotations.
std::vector<std::string> select_annotation_subset(const DatasetManifest& manifest,
                                                  double fraction, uint64_t seed);

// Deterministic, training-free embedder: pooled color/edge statistics plus a
// bank of seeded fixed filters; segmentation by distance from the border
// color. Lets the pipeline run end to end without backbone weights.
class StubEmbedder : public Embedder {
public:
    explicit StubEmbedder(uint64_t seed = 17);
    std::pair<ImageEmbedding, SegmentationMask> embed_and_segment(
        const CellImage& image) const override;
    Shape embedding_shape() const override { return {kChannels, kGrid, kGrid}; }
    std::string describe() const override { return "stub"; }

    static constexpr int kGrid = 16;
    static constexpr int kChannels = 24;

private:
    std::vector<Tensor> filters_;  // fixed 5x5 kernels
};

// One (embedding, post-processed target) pair per manifest entry; skips ids
// already in the store. Targets are resized to `target_size` squares.
void cache_embeddings(const DatasetManifest& manifest, const Embedder& embedder,
                      EmbeddingStore& store, int target_size = 256);

}  // namespace bcsam
