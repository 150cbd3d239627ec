#include "bcsam/autoencoder.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "bcsam/rng.hpp"
#include "bcsam/tensor_archive.hpp"

namespace bcsam {

using ag::Var;

void AEConfig::validate() const {
    if (encoder_channels.size() != 2)
        throw std::invalid_argument("AEConfig: encoder plan must name the two hidden widths");
    if (decoder_doublings < 1 || decoder_doublings > 10)
        throw std::invalid_argument("AEConfig: decoder_doublings out of range");
    if (static_cast<int>(decoder_channels.size()) != decoder_doublings - 1)
        throw std::invalid_argument("AEConfig: decoder_channels must have doublings-1 entries");
    if (latent_dim < 1 || in_channels < 1)
        throw std::invalid_argument("AEConfig: bad dimensions");
}

std::vector<int> default_decoder_channels(int doublings) {
    static const std::vector<int> full = {96, 96, 64, 48, 32, 24, 16};
    if (doublings < 1 || doublings > 8)
        throw std::invalid_argument("default_decoder_channels: 1..8 doublings supported");
    // keep the tail of the ladder so the last hidden widths stay small
    return {full.end() - (doublings - 1), full.end()};
}

CrossDomainAE CrossDomainAE::make(const AEConfig& cfg, uint64_t seed) {
    cfg.validate();
    CrossDomainAE m;
    m.cfg = cfg;
    Rng rng(seed);

    const int c1 = cfg.encoder_channels[0], c2 = cfg.encoder_channels[1];
    m.enc.push_back(nn::Conv2d::make(m.params, "enc.0", cfg.in_channels, c1, 3, 2, 1, rng));
    m.enc.push_back(nn::Conv2d::make(m.params, "enc.1", c1, c2, 3, 2, 1, rng));
    m.enc.push_back(nn::Conv2d::make(m.params, "enc.2", c2, cfg.latent_dim, 3, 2, 1, rng));

    std::vector<int> widths;
    widths.push_back(cfg.latent_dim);
    for (int c : cfg.decoder_channels) widths.push_back(c);
    widths.push_back(3);
    for (int i = 0; i + 1 < static_cast<int>(widths.size()); ++i)
        m.dec.push_back(nn::ConvTranspose2d::make(m.params, "dec." + std::to_string(i),
                                                  widths[static_cast<size_t>(i)],
                                                  widths[static_cast<size_t>(i) + 1], 4, 2, 1, rng));
    return m;
}

Var CrossDomainAE::encode(Var emb) const {
    if (emb.value().rank() != 4 || emb.value().dim(1) != cfg.in_channels)
        throw std::invalid_argument("encode: expected (N," + std::to_string(cfg.in_channels) +
                                    ",H,W), got " + shape_str(emb.shape()));
    Var h = emb;
    for (const auto& conv : enc) h = ag::relu(conv(h));
    return ag::gap(h);
}

Var CrossDomainAE::decode(Var z) const {
    if (z.value().rank() != 2 || z.value().dim(1) != cfg.latent_dim)
        throw std::invalid_argument("decode: expected (N," + std::to_string(cfg.latent_dim) +
                                    "), got " + shape_str(z.shape()));
    Var h = ag::reshape(z, {z.value().dim(0), cfg.latent_dim, 1, 1});
    for (size_t i = 0; i < dec.size(); ++i) {
        h = dec[i](h);
        h = (i + 1 < dec.size()) ? ag::relu(h) : ag::sigmoid(h);
    }
    return h;
}

Tensor CrossDomainAE::encode_value(const Tensor& emb) const {
    ag::NoGradGuard ng;
    Tensor batch = emb.reshaped({1, emb.dim(0), emb.dim(1), emb.dim(2)});
    return encode(ag::constant(batch)).value().reshaped({cfg.latent_dim});
}

Tensor CrossDomainAE::decode_value(const Tensor& z) const {
    ag::NoGradGuard ng;
    Tensor batch = z.reshaped({1, cfg.latent_dim});
    Tensor out = decode(ag::constant(batch)).value();
    return out.reshaped({3, out.dim(2), out.dim(3)});
}

LossBreakdown make_breakdown(double l_ssim, double l_mmd, double lambda, bool mmd_skipped) {
    LossBreakdown b;
    b.l_ssim = l_ssim;
    b.l_mmd = l_mmd;
    b.lambda = lambda;
    b.total = l_ssim + lambda * l_mmd;
    b.mmd_skipped = mmd_skipped;
    return b;
}

Var total_loss_var(const CrossDomainAE& model, const AEBatch& batch, double lambda,
                   const MMDConfig& mmd_cfg, const SSIMConfig& ssim_cfg, LossBreakdown* out) {
    const int64_t n = batch.embeddings.dim(0);
    if (n < 1 || batch.targets.dim(0) != n)
        throw std::invalid_argument("total_loss: embeddings/targets batch mismatch");

    Var emb = ag::constant(batch.embeddings);
    Var z = model.encode(emb);
    Var recon = model.decode(z);
    Var tgt = ag::constant(batch.targets);
    if (recon.shape() != tgt.shape())
        throw std::invalid_argument("total_loss: targets are " + shape_str(tgt.shape()) +
                                    " but the decoder emits " + shape_str(recon.shape()));

    Var l_ssim = ag::add_scalar(ag::mul_scalar(ssim_var(recon, tgt, ssim_cfg), -1.0), 1.0);

    const bool both_domains = batch.domain_a_count > 0 && batch.domain_a_count < n;
    Var total;
    double mmd_value = 0.0;
    if (both_domains) {
        Var za = ag::slice_rows(z, 0, batch.domain_a_count);
        Var zb = ag::slice_rows(z, batch.domain_a_count, n - batch.domain_a_count);
        Var l_mmd = mmd_var(za, zb, mmd_cfg);
        mmd_value = l_mmd.value()[0];
        total = ag::add(l_ssim, ag::mul_scalar(l_mmd, lambda));
    } else {
        total = l_ssim;
    }
    if (out) *out = make_breakdown(l_ssim.value()[0], mmd_value, lambda, !both_domains);
    return total;
}

namespace {

// cyclic, reshuffling sampler over one domain's ids
struct DomainSampler {
    std::vector<std::string> ids;
    size_t cursor = 0;
    Rng* rng = nullptr;

    const std::string& next() {
        if (cursor == ids.size()) {
            rng->shuffle(ids);
            cursor = 0;
        }
        return ids[cursor++];
    }
};

AEBatch assemble_batch(const EmbeddingStore& store, const std::vector<std::string>& ids_a,
                       const std::vector<std::string>& ids_b) {
    const int64_t n = static_cast<int64_t>(ids_a.size() + ids_b.size());
    AEBatch batch;
    batch.domain_a_count = static_cast<int64_t>(ids_a.size());
    std::vector<std::string> all = ids_a;
    all.insert(all.end(), ids_b.begin(), ids_b.end());
    for (int64_t i = 0; i < n; ++i) {
        Tensor emb = store.load_embedding(all[static_cast<size_t>(i)]);
        Tensor tgt = store.load_target(all[static_cast<size_t>(i)]);
        if (i == 0) {
            batch.embeddings = Tensor({n, emb.dim(0), emb.dim(1), emb.dim(2)});
            batch.targets = Tensor({n, tgt.dim(0), tgt.dim(1), tgt.dim(2)});
        }
        std::copy(emb.data(), emb.data() + emb.numel(),
                  batch.embeddings.data() + i * emb.numel());
        std::copy(tgt.data(), tgt.data() + tgt.numel(), batch.targets.data() + i * tgt.numel());
    }
    return batch;
}

double full_dataset_mmd(const EmbeddingStore& store, const CrossDomainAE& model,
                        const std::vector<std::string>& ids_a,
                        const std::vector<std::string>& ids_b) {
    ag::NoGradGuard ng;
    auto encode_all = [&](const std::vector<std::string>& ids) {
        Tensor z({static_cast<int64_t>(ids.size()), model.cfg.latent_dim});
        for (size_t i = 0; i < ids.size(); ++i) {
            Tensor zi = model.encode_value(store.load_embedding(ids[i]));
            std::copy(zi.data(), zi.data() + zi.numel(),
                      z.data() + static_cast<int64_t>(i) * model.cfg.latent_dim);
        }
        return z;
    };
    return mmd(encode_all(ids_a), encode_all(ids_b));
}

}  // namespace

AETrainResult train_autoencoder(const EmbeddingStore& store, const AETrainConfig& cfg,
                                const std::string& checkpoint_path) {
    if (store.size() == 0) throw std::invalid_argument("train_autoencoder: empty store");

    std::vector<std::string> ids_a = store.ids_for_domain(DomainId::matek19);
    std::vector<std::string> ids_b = store.ids_for_domain(DomainId::acevedo20);

    AETrainResult result;
    result.mmd_disabled = ids_a.empty() || ids_b.empty();
    if (result.mmd_disabled) {
        std::fprintf(stderr,
                     "[train-ae] warning: store holds a single domain; MMD term disabled\n");
        if (ids_a.empty()) std::swap(ids_a, ids_b);
    }

    CrossDomainAE model = CrossDomainAE::make(cfg.arch, cfg.seed);
    nn::AdamW opt(model.params, cfg.weight_decay);

    const int64_t total_n = static_cast<int64_t>(store.size());
    const int64_t batch_n = std::min<int64_t>(cfg.batch_size, total_n);
    const int steps_per_epoch =
        static_cast<int>((total_n + batch_n - 1) / batch_n);
    result.steps_per_epoch = steps_per_epoch;
    nn::WarmupCosine sched{cfg.lr, static_cast<int64_t>(cfg.epochs) * steps_per_epoch,
                           cfg.warmup_frac};

    Rng rng(cfg.seed + 1);
    DomainSampler sa{ids_a, ids_a.size(), &rng};  // cursor at end forces first-shuffle
    DomainSampler sb{ids_b, ids_b.size(), &rng};

    if (!result.mmd_disabled) result.full_mmd.push_back(full_dataset_mmd(store, model, ids_a, ids_b));

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_total = 0;
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            std::vector<std::string> pick_a, pick_b;
            if (result.mmd_disabled) {
                for (int64_t i = 0; i < batch_n; ++i) pick_a.push_back(sa.next());
            } else {
                const int64_t half = std::max<int64_t>(1, batch_n / 2);
                for (int64_t i = 0; i < half; ++i) pick_a.push_back(sa.next());
                for (int64_t i = 0; i < batch_n - half; ++i) pick_b.push_back(sb.next());
            }
            AEBatch batch = assemble_batch(store, pick_a, pick_b);

            opt.zero_grad();
            LossBreakdown bd;
            Var loss = total_loss_var(model, batch, cfg.lambda, MMDConfig{}, SSIMConfig{}, &bd);
            ag::backward(loss);
            opt.step(sched.at(step));

            result.history.push_back(bd);
            epoch_total += bd.total;
            std::fprintf(stderr,
                         "stage=train-ae epoch=%d step=%lld lr=%.3e l_ssim=%.6f l_mmd=%.6f total=%.6f\n",
                         epoch + 1, static_cast<long long>(step), sched.at(step), bd.l_ssim,
                         bd.l_mmd, bd.total);
        }
        result.epoch_mean_total.push_back(epoch_total / steps_per_epoch);
        if (!result.mmd_disabled)
            result.full_mmd.push_back(full_dataset_mmd(store, model, ids_a, ids_b));
    }

    nlohmann::json meta;
    meta["training"] = {{"lr", cfg.lr},
                        {"weight_decay", cfg.weight_decay},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"warmup_frac", cfg.warmup_frac},
                        {"lambda", cfg.lambda},
                        {"seed", cfg.seed},
                        {"steps_per_epoch", steps_per_epoch},
                        {"mmd_disabled", result.mmd_disabled}};
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& b : result.history)
        hist.push_back({{"l_ssim", b.l_ssim},
                        {"l_mmd", b.l_mmd},
                        {"lambda", b.lambda},
                        {"total", b.total},
                        {"mmd_skipped", b.mmd_skipped}});
    meta["loss_history"] = hist;
    meta["epoch_mean_total"] = result.epoch_mean_total;
    meta["full_mmd"] = result.full_mmd;
    save_ae_checkpoint(model, meta, checkpoint_path);
    return result;
}

void save_ae_checkpoint(const CrossDomainAE& model, const nlohmann::json& extra_meta,
                        const std::string& path) {
    TensorArchive ar;
    ar.meta = extra_meta;
    ar.meta["kind"] = "cross_domain_ae";
    ar.meta["arch"] = {{"in_channels", model.cfg.in_channels},
                       {"latent_dim", model.cfg.latent_dim},
                       {"encoder_channels", model.cfg.encoder_channels},
                       {"decoder_doublings", model.cfg.decoder_doublings},
                       {"decoder_channels", model.cfg.decoder_channels}};
    for (size_t i = 0; i < model.params.size(); ++i)
        ar.add(model.params.names[i], model.params.vars[i].value());
    ar.save(path);
}

CrossDomainAE load_ae_checkpoint(const std::string& path, nlohmann::json* meta_out) {
    TensorArchive ar = TensorArchive::load(path);
    if (ar.meta.value("kind", "") != "cross_domain_ae")
        throw std::runtime_error("not an autoencoder checkpoint: " + path);
    AEConfig cfg;
    const auto& arch = ar.meta.at("arch");
    cfg.in_channels = arch.at("in_channels").get<int>();
    cfg.latent_dim = arch.at("latent_dim").get<int>();
    cfg.encoder_channels = arch.at("encoder_channels").get<std::vector<int>>();
    cfg.decoder_doublings = arch.at("decoder_doublings").get<int>();
    cfg.decoder_channels = arch.at("decoder_channels").get<std::vector<int>>();

    CrossDomainAE model = CrossDomainAE::make(cfg, 0);
    for (size_t i = 0; i < model.params.size(); ++i) {
        const Tensor& src = ar.get(model.params.names[i]);
        Tensor& dst = model.params.vars[i].n->value;
        if (src.shape() != dst.shape())
            throw std::runtime_error("checkpoint shape mismatch for " + model.params.names[i]);
        std::copy(src.data(), src.data() + src.numel(), dst.data());
    }
    if (meta_out) *meta_out = ar.meta;
    return model;
}

FeatureTable extract_features(const EmbeddingStore& store, const std::string& checkpoint_path) {
    CrossDomainAE model = load_ae_checkpoint(checkpoint_path);
    FeatureTable table;
    for (const auto& id : store.ids()) {
        const StoreEntry& e = store.entry(id);
        FeatureRow row;
        row.image_id = id;
        row.domain = e.domain;
        row.label = e.label;
        Tensor z = model.encode_value(store.load_embedding(id));
        row.z.assign(z.data(), z.data() + z.numel());
        table.rows.push_back(std::move(row));
    }
    return table;
}

void save_feature_table(const FeatureTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write feature table: " + path);
    out << "image_id,domain,label";
    const size_t d = t.rows.empty() ? kLatentDim : t.rows.front().z.size();
    for (size_t i = 0; i < d; ++i) out << ",f" << i;
    out << "\n";
    char buf[32];
    for (const auto& row : t.rows) {
        out << row.image_id << "," << to_string(row.domain) << "," << row.label;
        for (double v : row.z) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << "," << buf;
        }
        out << "\n";
    }
}

FeatureTable load_feature_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open feature table: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty feature table: " + path);
    FeatureTable t;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        FeatureRow row;
        size_t pos = 0;
        int field = 0;
        while (pos <= line.size()) {
            size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            const std::string tok = line.substr(pos, comma - pos);
            if (field == 0) row.image_id = tok;
            else if (field == 1) row.domain = domain_from_string(tok);
            else if (field == 2) row.label = tok;
            else row.z.push_back(std::stod(tok));
            ++field;
            pos = comma + 1;
            if (comma == line.size()) break;
        }
        if (row.z.empty())
            throw std::runtime_error("feature table row without features at " + path + ":" +
                                     std::to_string(lineno));
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace bcsam
