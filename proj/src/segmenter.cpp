#include "bcsam/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "bcsam/rng.hpp"
#include "bcsam/tensor_archive.hpp"

namespace bcsam {

using ag::Var;

// ---------------------------------------------------------------- postprocess

PostProcessedImage postprocess_crop(const ImageF& image, const SegmentationMask& mask,
                                    const std::string& image_id) {
    if (image.height != mask.height || image.width != mask.width)
        throw std::invalid_argument("postprocess_crop: image and mask sizes differ");
    PostProcessedImage out;
    out.image_id = image_id;

    if (mask.count_nonzero() == 0) {
        out.image = image;
        out.mask_empty = true;
        return out;
    }

    int y0 = image.height, y1 = -1, x0 = image.width, x1 = -1;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }

    const int side = std::max({y1 - y0 + 1, x1 - x0 + 1, kMinCropSide});
    const int sy = y0 - (side - (y1 - y0 + 1)) / 2;
    const int sx = x0 - (side - (x1 - x0 + 1)) / 2;

    out.image = ImageF(image.channels, side, side, kGrayFill);
    for (int y = 0; y < side; ++y) {
        const int iy = sy + y;
        if (iy < 0 || iy >= image.height) continue;
        for (int x = 0; x < side; ++x) {
            const int ix = sx + x;
            if (ix < 0 || ix >= image.width || !mask.at(iy, ix)) continue;
            for (int c = 0; c < image.channels; ++c) out.image.at(c, y, x) = image.at(c, iy, ix);
        }
    }
    return out;
}

// ------------------------------------------------------------------- counting

int adapter_count(const BackboneSpec& spec, const std::vector<std::string>& targets) {
    return spec.depth * static_cast<int>(targets.size());
}

int64_t adapter_param_total(const BackboneSpec& spec, const LoRAConfig& cfg) {
    return static_cast<int64_t>(adapter_count(spec, cfg.targets)) * cfg.r * (2LL * spec.width);
}

// ----------------------------------------------------------- adapted backbone

std::unique_ptr<AdaptedBackbone> AdaptedBackbone::attach(const std::string& weights_path,
                                                         const LoRAConfig& cfg, uint64_t seed) {
    if (cfg.targets.empty())
        throw std::invalid_argument("attach_adapters: empty target list, nothing to train");
    static const std::set<std::string> known = {"q", "k", "v", "proj"};
    for (const auto& t : cfg.targets)
        if (!known.count(t))
            throw std::invalid_argument("attach_adapters: unknown target projection '" + t + "'");

    auto model = std::unique_ptr<AdaptedBackbone>(new AdaptedBackbone());
    model->frozen_ = BackboneWeights::load(weights_path);
    model->spec_ = model->frozen_.spec;
    model->lora_cfg_ = cfg;

    const int w = model->spec_.width;
    int adapter_index = 0;
    for (int i = 0; i < model->spec_.depth; ++i)
        for (const auto& t : cfg.targets) {
            const std::string id = "blocks." + std::to_string(i) + ".attn." + t;
            LoRAAdapter init = init_adapter(w, w, cfg.r, seed + 7919u * static_cast<uint64_t>(++adapter_index), id);
            model->adapter_a_[id] = model->trainable_.add("lora." + id + ".A", init.A);
            model->adapter_b_[id] = model->trainable_.add("lora." + id + ".B", init.B);
        }

    Rng head_rng(seed ^ 0x9e3779b97f4a7c15ull);
    const int emb = model->spec_.emb_channels;
    model->prompt_fc1_ = nn::Linear::make(model->trainable_, "prompt.fc1", 2, 64, head_rng);
    model->prompt_fc2_ = nn::Linear::make(model->trainable_, "prompt.fc2", 64, emb, head_rng);
    const int c2 = std::max(emb / 2, 8);
    const int c4 = std::max(emb / 4, 8);
    const int c8 = std::max(emb / 8, 4);
    model->dec_conv1_ = nn::Conv2d::make(model->trainable_, "maskdec.conv1", emb, c2, 3, 1, 1, head_rng);
    model->dec_conv2_ = nn::Conv2d::make(model->trainable_, "maskdec.conv2", c2, c4, 3, 1, 1, head_rng);
    model->dec_up1_ = nn::ConvTranspose2d::make(model->trainable_, "maskdec.up1", c4, c8, 4, 2, 1, head_rng);
    model->dec_up2_ = nn::ConvTranspose2d::make(model->trainable_, "maskdec.up2", c8, 1, 4, 2, 1, head_rng);
    return model;
}

Var AdaptedBackbone::attention_projection(Var tokens, const std::string& block,
                                          const char* which) const {
    const std::string id = block + ".attn." + which;
    Var out = ag::linear(tokens, ag::constant(frozen_.at(id + ".w")),
                         ag::constant(frozen_.at(id + ".b")));
    auto it = adapter_a_.find(id);
    if (it != adapter_a_.end()) {
        Var down = ag::linear(tokens, it->second);
        out = ag::add(out, ag::linear(down, adapter_b_.at(id)));
    }
    return out;
}

Var AdaptedBackbone::forward_embedding(const Tensor& cell_image) const {
    if (cell_image.rank() != 3 || cell_image.dim(0) != 3 ||
        cell_image.dim(1) != kCellImageSize || cell_image.dim(2) != kCellImageSize)
        throw std::invalid_argument("forward_embedding: expects a (3,224,224) image, got " +
                                    shape_str(cell_image.shape()));
    const int S = spec_.img_size, T = spec_.token_count(), Ts = spec_.tokens_per_side();
    const int w = spec_.width, heads = spec_.heads, dh = w / heads;

    Var x = ag::constant(cell_image.reshaped({1, 3, kCellImageSize, kCellImageSize}));
    x = ag::bilinear_resize(x, S, S);  // 224 -> native resolution
    x = ag::conv2d(x, ag::constant(frozen_.at("patch_embed.w")),
                   ag::constant(frozen_.at("patch_embed.b")), spec_.patch, 0);
    Var tokens = ag::permute(ag::reshape(x, {static_cast<int64_t>(w), T}), {1, 0});  // (T,w)
    tokens = ag::add(tokens, ag::constant(frozen_.at("pos_embed")));

    for (int i = 0; i < spec_.depth; ++i) {
        const std::string b = "blocks." + std::to_string(i);
        Var h = ag::layer_norm(tokens, ag::constant(frozen_.at(b + ".ln1.gamma")),
                               ag::constant(frozen_.at(b + ".ln1.beta")));
        Var q = attention_projection(h, b, "q");
        Var k = attention_projection(h, b, "k");
        Var v = attention_projection(h, b, "v");
        Var qh = ag::permute(ag::reshape(q, {T, heads, dh}), {1, 0, 2});
        Var kt = ag::permute(ag::reshape(k, {T, heads, dh}), {1, 2, 0});
        Var vh = ag::permute(ag::reshape(v, {T, heads, dh}), {1, 0, 2});
        Var attn = ag::softmax_lastdim(
            ag::mul_scalar(ag::bmm(qh, kt), 1.0 / std::sqrt(static_cast<double>(dh))));
        Var ctx = ag::reshape(ag::permute(ag::bmm(attn, vh), {1, 0, 2}), {T, w});
        ctx = ag::linear(ctx, ag::constant(frozen_.at(b + ".attn.proj.w")),
                         ag::constant(frozen_.at(b + ".attn.proj.b")));
        tokens = ag::add(tokens, ctx);

        Var h2 = ag::layer_norm(tokens, ag::constant(frozen_.at(b + ".ln2.gamma")),
                                ag::constant(frozen_.at(b + ".ln2.beta")));
        Var m = ag::linear(h2, ag::constant(frozen_.at(b + ".mlp.fc1.w")),
                           ag::constant(frozen_.at(b + ".mlp.fc1.b")));
        m = ag::linear(ag::gelu(m), ag::constant(frozen_.at(b + ".mlp.fc2.w")),
                       ag::constant(frozen_.at(b + ".mlp.fc2.b")));
        tokens = ag::add(tokens, m);
    }

    Var grid = ag::reshape(ag::permute(tokens, {1, 0}), {1, w, Ts, Ts});
    return ag::conv2d(grid, ag::constant(frozen_.at("neck.w")),
                      ag::constant(frozen_.at("neck.b")), 1, 0);
}

Var AdaptedBackbone::forward_mask_logits(Var embedding) const {
    // point prompt at the image center; single-cell crops are centered
    Var p;
    if (use_point_prompt_) {
        Var point = ag::constant(Tensor::from({1, 2}, {0.5, 0.5}));
        p = ag::reshape(prompt_fc2_(ag::relu(prompt_fc1_(point))),
                        {static_cast<int64_t>(spec_.emb_channels)});
    } else {
        p = ag::constant(Tensor::zeros({static_cast<int64_t>(spec_.emb_channels)}));
    }
    Var h = ag::add_channel_bias(embedding, p);
    h = ag::relu(dec_conv1_(h));
    h = ag::relu(dec_conv2_(h));
    h = ag::relu(dec_up1_(h));
    h = dec_up2_(h);
    return ag::bilinear_resize(h, kCellImageSize, kCellImageSize);
}

std::pair<ImageEmbedding, SegmentationMask> AdaptedBackbone::embed_and_segment(
    const CellImage& image) const {
    ag::NoGradGuard ng;
    Var emb = forward_embedding(image_to_tensor(image.image));
    Var logits = forward_mask_logits(emb);

    ImageEmbedding out;
    out.features = emb.value().reshaped(spec_.embedding_shape());
    out.image_id = image.image_id;
    out.domain = image.domain;

    SegmentationMask mask(kCellImageSize, kCellImageSize);
    const Tensor& l = logits.value();
    for (int i = 0; i < kCellImageSize * kCellImageSize; ++i)
        mask.data[static_cast<size_t>(i)] = l[i] > 0.0 ? 1 : 0;  // p > 0.5
    return {std::move(out), std::move(mask)};
}

void AdaptedBackbone::save_checkpoint(const std::string& path,
                                      const nlohmann::json& extra_meta) const {
    TensorArchive ar;
    ar.meta = extra_meta;
    ar.meta["kind"] = "segmenter_checkpoint";
    ar.meta["variant"] = spec_.name;
    ar.meta["lora"] = {{"r", lora_cfg_.r}, {"targets", lora_cfg_.targets}};
    ar.meta["frozen_checksum"] = to_hex(frozen_.checksum());
    for (size_t i = 0; i < trainable_.size(); ++i)
        ar.add(trainable_.names[i], trainable_.vars[i].value());
    ar.save(path);
}

void AdaptedBackbone::load_trainable(const std::string& path) {
    TensorArchive ar = TensorArchive::load(path);
    if (ar.meta.value("kind", "") != "segmenter_checkpoint")
        throw std::runtime_error("not a segmenter checkpoint: " + path);
    if (ar.meta.value("variant", "") != spec_.name)
        throw std::runtime_error("checkpoint variant " + ar.meta.value("variant", "?") +
                                 " does not match backbone " + spec_.name);
    for (size_t i = 0; i < trainable_.size(); ++i) {
        const Tensor& src = ar.get(trainable_.names[i]);
        Tensor& dst = trainable_.vars[i].n->value;
        if (src.shape() != dst.shape())
            throw std::runtime_error("checkpoint shape mismatch for " + trainable_.names[i]);
        std::copy(src.data(), src.data() + src.numel(), dst.data());
    }
}

LoRAAdapter AdaptedBackbone::adapter_snapshot(const std::string& target_id) const {
    auto it = adapter_a_.find(target_id);
    if (it == adapter_a_.end())
        throw std::invalid_argument("no adapter attached at " + target_id);
    LoRAAdapter a;
    a.r = lora_cfg_.r;
    a.target_id = target_id;
    a.A = it->second.value().clone();
    a.B = adapter_b_.at(target_id).value().clone();
    return a;
}

// ------------------------------------------------------------------ fine-tune

SegTrainResult finetune_segmentation(
    AdaptedBackbone& model, const std::vector<std::pair<CellImage, SegmentationMask>>& annotated,
    const SegTrainConfig& cfg, const std::string& checkpoint_path) {
    if (annotated.empty())
        throw std::invalid_argument("finetune_segmentation: empty annotated set");
    for (const auto& [img, mask] : annotated) {
        if (mask.height != kCellImageSize || mask.width != kCellImageSize)
            throw std::invalid_argument("finetune_segmentation: mask must be 224x224");
        for (uint8_t v : mask.data)
            if (v > 1)
                throw std::invalid_argument("finetune_segmentation: non-binary mask for " +
                                            img.image_id);
    }

    SegTrainResult result;
    result.frozen_checksum_before = model.frozen_checksum();

    nn::AdamW opt(model.trainable(), cfg.weight_decay);
    const int64_t n = static_cast<int64_t>(annotated.size());
    nn::WarmupCosine sched{cfg.lr, static_cast<int64_t>(cfg.epochs) * n, cfg.warmup_frac};
    Rng rng(cfg.seed + 13);

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(annotated.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        double epoch_loss = 0;
        for (size_t idx : order) {
            const auto& [img, mask] = annotated[idx];
            Tensor target({1, 1, kCellImageSize, kCellImageSize});
            for (size_t i = 0; i < mask.data.size(); ++i)
                target.data()[i] = static_cast<double>(mask.data[i]);

            opt.zero_grad();
            Var logits = model.forward_mask_logits(model.forward_embedding(image_to_tensor(img.image)));
            Var tgt = ag::constant(target);
            Var p = ag::sigmoid(logits);
            Var inter = ag::sum_all(ag::mul(p, tgt));
            Var num = ag::add_scalar(ag::mul_scalar(inter, 2.0), 1.0);
            Var den = ag::add_scalar(ag::add(ag::sum_all(p), ag::sum_all(tgt)), 1.0);
            Var dice = ag::add_scalar(ag::mul_scalar(ag::divv(num, den), -1.0), 1.0);
            Var bce = ag::bce_with_logits(logits, tgt);
            Var loss = ag::mul_scalar(ag::add(dice, bce), 0.5);

            ag::backward(loss);
            opt.step(sched.at(step));
            ++step;

            result.step_losses.push_back(loss.value()[0]);
            epoch_loss += loss.value()[0];
            std::fprintf(stderr, "stage=finetune-seg epoch=%d step=%lld loss=%.6f\n", epoch + 1,
                         static_cast<long long>(step), loss.value()[0]);
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(n));
    }

    result.frozen_checksum_after = model.frozen_checksum();

    nlohmann::json meta;
    meta["training"] = {{"lr", cfg.lr},
                        {"weight_decay", cfg.weight_decay},
                        {"epochs", cfg.epochs},
                        {"warmup_frac", cfg.warmup_frac},
                        {"seed", cfg.seed},
                        {"annotated_count", annotated.size()}};
    meta["loss_history"] = result.step_losses;
    model.save_checkpoint(checkpoint_path, meta);
    return result;
}

std::vector<std::string> select_annotation_subset(const DatasetManifest& manifest,
                                                  double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("select_annotation_subset: fraction must be in (0,1]");
    std::map<std::string, std::vector<std::string>> by_class;
    for (const auto& e : manifest.entries) by_class[e.unified_label].push_back(e.image_id);

    Rng rng(seed);
    std::vector<std::string> out;
    for (auto& [cls, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        rng.shuffle(ids);
        const auto want = std::max<int64_t>(
            1, std::llround(fraction * static_cast<double>(ids.size())));
        for (int64_t i = 0; i < want && i < static_cast<int64_t>(ids.size()); ++i)
            out.push_back(ids[static_cast<size_t>(i)]);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ----------------------------------------------------------------------- stub

StubEmbedder::StubEmbedder(uint64_t seed) {
    Rng rng(seed);
    for (int f = 0; f < kChannels - 5; ++f) {
        Tensor k({5, 5});
        double mean = 0;
        for (int64_t i = 0; i < 25; ++i) {
            k.data()[i] = rng.normal();
            mean += k.data()[i];
        }
        mean /= 25.0;
        double norm = 0;
        for (int64_t i = 0; i < 25; ++i) {
            k.data()[i] -= mean;
            norm += k.data()[i] * k.data()[i];
        }
        norm = std::sqrt(norm);
        for (int64_t i = 0; i < 25; ++i) k.data()[i] /= norm;
        filters_.push_back(std::move(k));
    }
}

namespace {

SegmentationMask stub_segment(const ImageF& img) {
    // background estimate: per-channel median over a 2px border ring
    std::vector<float> border[3];
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (y >= 2 && y < img.height - 2 && x >= 2 && x < img.width - 2) continue;
            for (int c = 0; c < 3; ++c) border[c].push_back(img.at(c, y, x));
        }
    float bg[3];
    for (int c = 0; c < 3; ++c) {
        auto& v = border[c];
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        bg[c] = v[v.size() / 2];
    }

    MaskU8 raw(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double d = 0;
            for (int c = 0; c < 3; ++c) {
                const double diff = img.at(c, y, x) - bg[c];
                d += diff * diff;
            }
            raw.at(y, x) = d > 0.18 * 0.18 ? 1 : 0;
        }

    // one 3x3 majority pass knocks out speckle
    MaskU8 out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            int count = 0, total = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) continue;
                    ++total;
                    count += raw.at(yy, xx);
                }
            out.at(y, x) = 2 * count > total ? 1 : 0;
        }
    return out;
}

}  // namespace

std::pair<ImageEmbedding, SegmentationMask> StubEmbedder::embed_and_segment(
    const CellImage& image) const {
    const ImageF& img = image.image;
    SegmentationMask mask = stub_segment(img);

    Tensor features({kChannels, kGrid, kGrid});
    const int cell = img.height / kGrid;  // 224/16 = 14

    // channels 0..2: RGB cell means; 3: gradient magnitude; 4: mask occupancy
    for (int gy = 0; gy < kGrid; ++gy)
        for (int gx = 0; gx < kGrid; ++gx) {
            double sum[3] = {0, 0, 0}, grad = 0, occ = 0;
            for (int y = gy * cell; y < (gy + 1) * cell; ++y)
                for (int x = gx * cell; x < (gx + 1) * cell; ++x) {
                    for (int c = 0; c < 3; ++c) sum[c] += img.at(c, y, x);
                    occ += mask.at(y, x);
                    if (y > 0 && x > 0) {
                        double gmag = 0;
                        for (int c = 0; c < 3; ++c) {
                            const double dy = img.at(c, y, x) - img.at(c, y - 1, x);
                            const double dx = img.at(c, y, x) - img.at(c, y, x - 1);
                            gmag += dy * dy + dx * dx;
                        }
                        grad += std::sqrt(gmag);
                    }
                }
            const double area = static_cast<double>(cell) * cell;
            for (int c = 0; c < 3; ++c)
                features.data()[(c * kGrid + gy) * kGrid + gx] = sum[c] / area;
            features.data()[(3 * kGrid + gy) * kGrid + gx] = grad / area;
            features.data()[(4 * kGrid + gy) * kGrid + gx] = occ / area;
        }

    // remaining channels: fixed random filters over a 64x64 grayscale view
    ImageF gray(1, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            gray.at(0, y, x) = (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.f;
    ImageF g64 = resize_bilinear(gray, 64, 64);

    for (size_t f = 0; f < filters_.size(); ++f) {
        ImageF resp(1, 60, 60);
        for (int y = 0; y < 60; ++y)
            for (int x = 0; x < 60; ++x) {
                double s = 0;
                for (int ky = 0; ky < 5; ++ky)
                    for (int kx = 0; kx < 5; ++kx)
                        s += filters_[f][ky * 5 + kx] * g64.at(0, y + ky, x + kx);
                resp.at(0, y, x) = static_cast<float>(std::abs(s));
            }
        ImageF pooled = resize_bilinear(resp, kGrid, kGrid);
        for (int i = 0; i < kGrid * kGrid; ++i)
            features.data()[(static_cast<int64_t>(5 + f) * kGrid * kGrid) + i] =
                static_cast<double>(pooled.data[static_cast<size_t>(i)]);
    }

    ImageEmbedding out;
    out.features = std::move(features);
    out.image_id = image.image_id;
    out.domain = image.domain;
    return {std::move(out), std::move(mask)};
}

// ---------------------------------------------------------------------- cache

void cache_embeddings(const DatasetManifest& manifest, const Embedder& embedder,
                      EmbeddingStore& store, int target_size) {
    store.meta()["embedder"] = embedder.describe();
    store.meta()["post_neck"] = true;
    store.meta()["target_size"] = target_size;
    for (const auto& entry : manifest.entries) {
        if (store.contains(entry.image_id)) continue;
        CellImage cell = load_image(entry);
        auto [emb, mask] = embedder.embed_and_segment(cell);
        PostProcessedImage post = postprocess_crop(cell.image, mask, entry.image_id);
        ImageF target = resize_bilinear(post.image, target_size, target_size);
        store.put(entry.image_id, entry.domain, entry.unified_label, emb.features,
                  image_to_tensor(target), post.mask_empty);
    }
}

}  // namespace bcsam
