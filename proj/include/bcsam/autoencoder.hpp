#pragma once

// Cross-domain autoencoder: a three-conv + GAP encoder maps backbone
// embeddings to 50-dim latents; a chain of stride-2 transposed convolutions
// (eight by default, giving a 256x256 sigmoid-bounded reconstruction) decodes
// them. Training minimizes mean (1 - SSIM(m_i, c_i)) plus lambda times the
// MMD between the two domains' latent half-batches, with lambda = 5.

#include <cstdint>
#include <string>
#include <vector>

#include "bcsam/embedding_store.hpp"
#include "bcsam/mmd.hpp"
#include "bcsam/nn.hpp"
#include "bcsam/ssim.hpp"
#include "bcsam/tensor.hpp"

namespace bcsam {

inline constexpr int kLatentDim = 50;

struct AEConfig {
    int in_channels = 256;
    int latent_dim = kLatentDim;
    std::vector<int> encoder_channels = {128, 64};  // plan: in -> 128 -> 64 -> latent
    int decoder_doublings = 8;                      // output side = 2^doublings
    std::vector<int> decoder_channels = {96, 96, 64, 48, 32, 24, 16};  // between tconvs

    int output_size() const { return 1 << decoder_doublings; }
    void validate() const;
};

// channel ladder for a reduced number of doublings (test-scale decoders)
std::vector<int> default_decoder_channels(int doublings);

struct CrossDomainAE {
    AEConfig cfg;
    nn::ParamSet params;
    std::vector<nn::Conv2d> enc;
    std::vector<nn::ConvTranspose2d> dec;

    static CrossDomainAE make(const AEConfig& cfg, uint64_t seed);

    ag::Var encode(ag::Var emb) const;  // (N,C,H,W) -> (N,latent)
    ag::Var decode(ag::Var z) const;    // (N,latent) -> (N,3,S,S) in [0,1]

    Tensor encode_value(const Tensor& emb) const;  // single (C,H,W) -> (latent)
    Tensor decode_value(const Tensor& z) const;    // single (latent) -> (3,S,S)
};

struct LossBreakdown {
    double l_ssim = 0;
    double l_mmd = 0;
    double lambda = 5.0;
    double total = 0;
    bool mmd_skipped = false;
};

// total is computed as l_ssim + lambda * l_mmd in the same precision; the
// invariant is exact, not approximate.
LossBreakdown make_breakdown(double l_ssim, double l_mmd, double lambda, bool mmd_skipped);

struct AEBatch {
    Tensor embeddings;  // (N,C,H,W)
    Tensor targets;     // (N,3,S,S)
    int64_t domain_a_count = 0;  // rows [0, domain_a_count) belong to domain A
};

// Builds the graph and reports the same numbers through `out`.
ag::Var total_loss_var(const CrossDomainAE& model, const AEBatch& batch, double lambda,
                       const MMDConfig& mmd_cfg, const SSIMConfig& ssim_cfg,
                       LossBreakdown* out);

struct AETrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.05;
    int epochs = 10;
    int batch_size = 16;
    double warmup_frac = 0.1;
    double lambda = 5.0;
    uint64_t seed = 0;
    AEConfig arch;
};

struct AETrainResult {
    std::vector<LossBreakdown> history;     // one per step
    std::vector<double> epoch_mean_total;   // one per epoch
    std::vector<double> full_mmd;           // [0]=before training, [i]=after epoch i
    int steps_per_epoch = 0;
    bool mmd_disabled = false;              // store had a single domain
};

// Trains on the store (both domains expected; single domain trains without
// the MMD term and flags it) and writes a checkpoint with the loss history.
AETrainResult train_autoencoder(const EmbeddingStore& store, const AETrainConfig& cfg,
                                const std::string& checkpoint_path);

void save_ae_checkpoint(const CrossDomainAE& model, const nlohmann::json& extra_meta,
                        const std::string& path);
CrossDomainAE load_ae_checkpoint(const std::string& path, nlohmann::json* meta_out = nullptr);

struct FeatureRow {
    std::string image_id;
    DomainId domain = DomainId::matek19;
    std::string label;
    std::vector<double> z;
};

struct FeatureTable {
    std::vector<FeatureRow> rows;  // sorted by image_id
};

// One latent row per stored image; deterministic given checkpoint and store.
FeatureTable extract_features(const EmbeddingStore& store, const std::string& checkpoint_path);

void save_feature_table(const FeatureTable& t, const std::string& path);
FeatureTable load_feature_table(const std::string& path);

}  // namespace bcsam
