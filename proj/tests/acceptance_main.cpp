// Acceptance suite: runs every pipeline-level criterion at its stated
// tolerance and prints one PASS/FAIL line per criterion. Exits nonzero if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "bcsam/autoencoder.hpp"
#include "bcsam/classifiers.hpp"
#include "bcsam/eval.hpp"
#include "bcsam/lora.hpp"
#include "bcsam/mmd.hpp"
#include "bcsam/pipeline.hpp"
#include "bcsam/rng.hpp"
#include "bcsam/segmenter.hpp"
#include "bcsam/ssim.hpp"
#include "bcsam/synth.hpp"
#include "support/ssim_oracle.hpp"

using namespace bcsam;
namespace fs = std::filesystem;

namespace {

struct Checker {
    std::vector<std::string> failures;

    void require(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    void require_le(double value, double bound, const std::string& what) {
        if (!(value <= bound))
            failures.push_back(what + " (" + std::to_string(value) + " > " +
                               std::to_string(bound) + ")");
    }
};

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

Tensor gaussian_batch(int64_t n, int64_t d, double mean, Rng& rng) {
    Tensor t({n, d});
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(mean, 1.0);
    return t;
}

fs::path scratch_dir() {
    const fs::path p = fs::temp_directory_path() / "bcsam_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// ---------------------------------------------------------------- criterion 1

void criterion_lora(Checker& c) {
    Rng rng(1);
    const int64_t n = 256;

    // zero-init neutrality
    Tensor w = random_tensor({n, n}, rng);
    Tensor x = random_tensor({n, 4}, rng);
    LoRAAdapter fresh = init_adapter(n, n, 4, 11);
    Tensor adapted = adapted_forward(x, w, fresh);
    Tensor frozen({n, 4});
    frozen.mat(n, 4) = w.mat(n, n) * x.mat(n, 4);
    double max_diff = 0;
    for (int64_t i = 0; i < adapted.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(adapted[i] - frozen[i]));
    c.require_le(max_diff, 1e-6, "zero-init neutrality |adapted - frozen|");

    // factored/merged equivalence with a trained-looking adapter
    LoRAAdapter a = init_adapter(n, n, 4, 13);
    for (int64_t i = 0; i < a.B.numel(); ++i) a.B.data()[i] = rng.normal();
    Tensor got = adapted_forward(x, w, a);
    Tensor merged = merge_weights(w, a);
    Tensor want({n, 4});
    want.mat(n, 4) = merged.mat(n, n) * x.mat(n, 4);
    double max_rel = 0;
    for (int64_t i = 0; i < got.numel(); ++i)
        max_rel = std::max(max_rel, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
    c.require_le(max_rel, 1e-5, "factored/merged relative error");

    // low-rank bound via SVD tail
    Tensor ba = merge_weights(Tensor::zeros({n, n}), a);
    Eigen::MatrixXd m = ba.mat(n, n);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    for (int i = 4; i < sv.size(); ++i)
        c.require(sv(i) <= 1e-6 * sv(0), "singular value " + std::to_string(i) + " above rank bound");
}

// ---------------------------------------------------------------- criterion 2

void criterion_ssim(Checker& c) {
    Rng rng(2);
    Tensor x = random_tensor({1, 16, 16}, rng, 0, 1);
    c.require_le(std::abs(ssim(x, x) - 1.0), 1e-9, "ssim identity");

    for (int t = 0; t < 10; ++t) {
        Tensor a = random_tensor({1, 16, 16}, rng, 0, 1);
        Tensor b = random_tensor({1, 16, 16}, rng, 0, 1);
        c.require_le(std::abs(ssim(a, b) - ssim(b, a)), 1e-9, "ssim symmetry");
        c.require_le(std::abs(ssim(a, b) - testing::ssim_oracle(a, b, {})), 1e-6,
                     "ssim oracle agreement, pair " + std::to_string(t));
    }
}

// ---------------------------------------------------------------- criterion 3

void criterion_mmd(Checker& c) {
    Rng rng(3);
    Tensor z = gaussian_batch(64, 50, 0.0, rng);
    c.require_le(std::abs(mmd(z, z)), 1e-9, "mmd zero on identical");

    // seeded 3-sigma mean shift against a 200-permutation null
    const int64_t n = 256, d = 50;
    Tensor a = gaussian_batch(n, d, 0.0, rng);
    Tensor b = gaussian_batch(n, d, 3.0, rng);

    const double med = median_sq_distance(a, b);
    MMDConfig cfg;
    for (double mult : {0.5, 1.0, 2.0}) cfg.bandwidths.push_back(mult * med);
    const double observed = mmd(a, b, cfg);

    // pooled kernel matrix once; permutations only re-index it
    const int64_t total = 2 * n;
    Tensor pooled({total, d});
    std::copy(a.data(), a.data() + a.numel(), pooled.data());
    std::copy(b.data(), b.data() + b.numel(), pooled.data() + a.numel());
    std::vector<double> kernel(static_cast<size_t>(total * total));
    for (int64_t i = 0; i < total; ++i)
        for (int64_t j = 0; j < total; ++j) {
            double dist = 0;
            for (int64_t t = 0; t < d; ++t) {
                const double diff = pooled[i * d + t] - pooled[j * d + t];
                dist += diff * diff;
            }
            double k = 0;
            for (double bw : cfg.bandwidths) k += std::exp(-dist / bw);
            kernel[static_cast<size_t>(i * total + j)] = k;
        }
    auto vstat = [&](const std::vector<int64_t>& left, const std::vector<int64_t>& right) {
        double kxx = 0, kyy = 0, kxy = 0;
        for (int64_t i : left)
            for (int64_t j : left) kxx += kernel[static_cast<size_t>(i * total + j)];
        for (int64_t i : right)
            for (int64_t j : right) kyy += kernel[static_cast<size_t>(i * total + j)];
        for (int64_t i : left)
            for (int64_t j : right) kxy += kernel[static_cast<size_t>(i * total + j)];
        const double nn = static_cast<double>(n) * static_cast<double>(n);
        return kxx / nn + kyy / nn - 2.0 * kxy / nn;
    };

    std::vector<int64_t> idx(static_cast<size_t>(total));
    std::iota(idx.begin(), idx.end(), 0);
    const double check = vstat({idx.begin(), idx.begin() + n}, {idx.begin() + n, idx.end()});
    c.require_le(std::abs(check - observed), 1e-9, "permutation harness reproduces the statistic");

    Rng perm_rng(1234);
    std::vector<double> null_stats;
    for (int p = 0; p < 200; ++p) {
        perm_rng.shuffle(idx);
        null_stats.push_back(
            vstat({idx.begin(), idx.begin() + n}, {idx.begin() + n, idx.end()}));
    }
    std::sort(null_stats.begin(), null_stats.end());
    const double p95 = null_stats[static_cast<size_t>(std::floor(0.95 * (null_stats.size() - 1)))];
    c.require(observed > p95, "mean-shift MMD does not exceed the 95th null percentile");
}

// ---------------------------------------------------------------- criterion 4

void criterion_composite(Checker& c) {
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const double ls = rng.uniform(0, 2), lm = rng.uniform(0, 1);
        LossBreakdown b = make_breakdown(ls, lm, 5.0, false);
        c.require(b.total == ls + 5.0 * lm, "breakdown total != l_ssim + 5*l_mmd");
        c.require(b.lambda == 5.0, "lambda is not 5");
    }

    // the training path emits the same exact composition
    AEConfig arch;
    arch.in_channels = 4;
    arch.decoder_doublings = 3;
    arch.decoder_channels = default_decoder_channels(3);
    CrossDomainAE model = CrossDomainAE::make(arch, 5);
    AEBatch batch{random_tensor({4, 4, 8, 8}, rng), random_tensor({4, 3, 8, 8}, rng, 0, 1), 2};
    LossBreakdown bd;
    ag::NoGradGuard ng;
    ag::Var total = total_loss_var(model, batch, 5.0, MMDConfig{}, SSIMConfig{}, &bd);
    c.require(bd.total == bd.l_ssim + bd.lambda * bd.l_mmd, "emitted breakdown is inexact");
    c.require(total.value()[0] == bd.total, "engine total differs from breakdown total");
}

// ---------------------------------------------------------------- criterion 5

void criterion_gradient(Checker& c) {
    AEConfig arch;
    arch.in_channels = 4;
    arch.decoder_doublings = 3;  // 8x8 reconstructions
    arch.decoder_channels = default_decoder_channels(3);
    CrossDomainAE model = CrossDomainAE::make(arch, 11);

    Rng rng(5);
    AEBatch batch{random_tensor({4, 4, 8, 8}, rng), random_tensor({4, 3, 8, 8}, rng, 0, 1), 2};
    // the median heuristic is a stop-gradient constant; pin the bandwidths the
    // analytic path uses so the finite-difference probe sees the same function
    MMDConfig mmd_cfg;
    mmd_cfg.bandwidths = {0.5, 2.0, 8.0};

    ag::Var loss = total_loss_var(model, batch, 5.0, mmd_cfg, SSIMConfig{}, nullptr);
    for (auto& v : model.params.vars) v.n->grad = Tensor{};
    ag::backward(loss);

    auto loss_value = [&]() {
        ag::NoGradGuard ng;
        return total_loss_var(model, batch, 5.0, mmd_cfg, SSIMConfig{}, nullptr).value()[0];
    };

    int probes = 0;
    double worst = 0;
    for (size_t p = 0; p < model.params.size(); ++p) {
        auto& var = model.params.vars[p];
        if (!var.n->grad.defined()) {
            c.require(false, "missing gradient for " + model.params.names[p]);
            continue;
        }
        const int64_t stride = std::max<int64_t>(1, var.n->value.numel() / 2);
        for (int64_t i = 0; i < var.n->value.numel(); i += stride) {
            const double h = 1e-5;
            double* theta = var.n->value.data();
            const double orig = theta[i];
            theta[i] = orig + h;
            const double fp = loss_value();
            theta[i] = orig - h;
            const double fm = loss_value();
            theta[i] = orig;
            const double fd = (fp - fm) / (2 * h);
            const double an = var.n->grad[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, rel);
            ++probes;
        }
    }
    c.require(probes >= 30, "too few gradient probes");
    c.require_le(worst, 1e-3, "worst analytic-vs-FD relative error");
}

// ---------------------------------------------------------------- criterion 6

void criterion_postprocess(Checker& c) {
    Rng rng(6);
    const int S = kCellImageSize;
    int empties = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        ImageF img(3, S, S);
        for (auto& v : img.data) v = static_cast<float>(rng.uniform());

        MaskU8 mask(S, S, 0);
        const int kind = trial % 10;
        if (kind == 0) {
            std::fill(mask.data.begin(), mask.data.end(), 1);
        } else if (kind == 1) {
            // empty
        } else if (kind <= 5) {
            const int y0 = static_cast<int>(rng.below(S - 2)), x0 = static_cast<int>(rng.below(S - 2));
            const int h = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(S - y0)));
            const int w = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(S - x0)));
            for (int y = y0; y < y0 + h; ++y)
                for (int x = x0; x < x0 + w; ++x) mask.at(y, x) = 1;
        } else if (kind <= 7) {
            const double cy = rng.uniform(20, S - 20), cx = rng.uniform(20, S - 20);
            const double ry = rng.uniform(3, 60), rx = rng.uniform(3, 60);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    if ((y - cy) * (y - cy) / (ry * ry) + (x - cx) * (x - cx) / (rx * rx) <= 1.0)
                        mask.at(y, x) = 1;
        } else {
            const int k = 1 + static_cast<int>(rng.below(50));
            for (int i = 0; i < k; ++i)
                mask.at(static_cast<int>(rng.below(S)), static_cast<int>(rng.below(S))) = 1;
        }

        PostProcessedImage out = postprocess_crop(img, mask, "t");
        c.require(out.image.height == out.image.width, "output is not square");

        if (mask.count_nonzero() == 0) {
            c.require(out.mask_empty, "empty mask did not set the fallback flag");
            c.require(out.image.data == img.data, "empty-mask fallback altered the image");
            ++empties;
            continue;
        }
        if (kind == 0) {
            c.require(out.image.data == img.data, "full mask is not the identity");
        }

        // independent re-derivation of the crop window
        int y0 = S, y1 = -1, x0 = S, x1 = -1;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                if (mask.at(y, x)) {
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                }
        const int side = std::max({y1 - y0 + 1, x1 - x0 + 1, kMinCropSide});
        const int sy = y0 - (side - (y1 - y0 + 1)) / 2;
        const int sx = x0 - (side - (x1 - x0 + 1)) / 2;
        c.require(out.image.height == side, "crop side disagrees with the derived window");

        bool gray_ok = true, copy_ok = true, bbox_ok = true;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                const int iy = sy + y, ix = sx + x;
                const bool in = iy >= 0 && iy < S && ix >= 0 && ix < S;
                if (in && mask.at(iy, ix)) {
                    for (int ch = 0; ch < 3; ++ch)
                        copy_ok &= out.image.at(ch, y, x) == img.at(ch, iy, ix);
                } else {
                    for (int ch = 0; ch < 3; ++ch)
                        gray_ok &= out.image.at(ch, y, x) == kGrayFill;
                }
            }
        // every masked pixel lies inside the window
        bbox_ok = sy <= y0 && sx <= x0 && y1 < sy + side && x1 < sx + side;
        c.require(gray_ok, "outside-mask pixel not exactly 128/255, trial " + std::to_string(trial));
        c.require(copy_ok, "masked pixel altered, trial " + std::to_string(trial));
        c.require(bbox_ok, "bounding box escapes the crop window");
    }
    c.require(empties == 100, "empty-mask trials miscounted");
}

// ---------------------------------------------------------------- criterion 7

FeatureTable acceptance_features(DomainId domain, int per_class, uint64_t seed) {
    Rng rng(seed);
    FeatureTable t;
    for (int cls = 0; cls < 5; ++cls)
        for (int i = 0; i < per_class; ++i) {
            FeatureRow row;
            row.image_id = std::string(to_string(domain)) + "/c" + std::to_string(cls) + "/" +
                           std::to_string(i);
            row.domain = domain;
            row.label = "class" + std::to_string(cls);
            row.z.resize(50);
            for (int j = 0; j < 50; ++j)
                row.z[static_cast<size_t>(j)] = rng.normal() + (j % 5 == cls ? 4.0 : 0.0);
            t.rows.push_back(std::move(row));
        }
    std::sort(t.rows.begin(), t.rows.end(),
              [](const FeatureRow& a, const FeatureRow& b) { return a.image_id < b.image_id; });
    return t;
}

void criterion_protocol(Checker& c) {
    const fs::path dir = scratch_dir() / "protocol";
    fs::create_directories(dir);

    FeatureTable src = acceptance_features(DomainId::matek19, 10, 71);
    FeatureTable tgt = acceptance_features(DomainId::acevedo20, 10, 72);
    save_feature_table(src, (dir / "src.csv").string());
    save_feature_table(tgt, (dir / "tgt.csv").string());

    DatasetManifest m;
    for (const auto& row : src.rows) {
        ManifestEntry e;
        e.image_id = row.image_id;
        e.unified_label = row.label;
        e.domain = row.domain;
        m.entries.push_back(std::move(e));
    }
    FoldAssignment folds = stratified_folds(m, 5, 3);
    save_folds(folds, (dir / "folds.json").string());

    // leakage: in every fold, train and source-test ids are disjoint
    for (int fold = 0; fold < folds.k; ++fold) {
        std::set<std::string> test, train;
        for (const auto& [id, f] : folds.fold_of) (f == fold ? test : train).insert(id);
        for (const auto& id : test)
            c.require(!train.count(id), "train/test leakage at fold " + std::to_string(fold));
        c.require(!test.empty() && !train.empty(), "degenerate fold split");
    }

    for (int run = 0; run < 2; ++run) {
        pipeline::evaluate_one((dir / "src.csv").string(), (dir / "tgt.csv").string(),
                               (dir / "folds.json").string(), "svm_rbf", 9,
                               (dir / ("partial_" + std::to_string(run) + ".json")).string());
        pipeline::merge_reports({(dir / ("partial_" + std::to_string(run) + ".json")).string()},
                                (dir / ("report_" + std::to_string(run) + ".json")).string(),
                                (dir / ("report_" + std::to_string(run) + ".md")).string());
    }
    c.require(slurp(dir / "report_0.json") == slurp(dir / "report_1.json"),
              "same seed did not reproduce report.json byte for byte");
    c.require(!slurp(dir / "report_0.json").empty(), "report.json is empty");
}

// ---------------------------------------------------------------- criterion 8

void criterion_desk_scale(Checker& c) {
    const fs::path dir = scratch_dir() / "e2e";
    fs::create_directories(dir);

    SynthConfig sc;
    sc.per_class = 6;
    sc.seed = 21;
    sc.emit_masks = false;
    generate_synthetic_dataset((dir / "data").string(), sc);
    LabelMap map = load_label_map((dir / "data" / "label_map.json").string());

    StubEmbedder stub(17);
    EmbeddingStore store = EmbeddingStore::open((dir / "store").string());
    FoldAssignment folds_a, folds_b;
    DatasetManifest man_a = scan_dataset((dir / "data" / "matek19").string(),
                                         DomainId::matek19, map);
    DatasetManifest man_b = scan_dataset((dir / "data" / "acevedo20").string(),
                                         DomainId::acevedo20, map);
    cache_embeddings(man_a, stub, store, 256);
    cache_embeddings(man_b, stub, store, 256);

    AETrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;
    tc.seed = 5;
    tc.lambda = 5.0;
    tc.arch.in_channels = StubEmbedder::kChannels;
    tc.arch.decoder_doublings = 8;  // 256x256 reconstructions
    AETrainResult res = train_autoencoder(store, tc, (dir / "ae.ckpt").string());

    // (c) final-epoch mean total loss below the first epoch's
    c.require(res.epoch_mean_total.back() < res.epoch_mean_total.front(),
              "mean total loss did not decrease");

    // (b) full-dataset latent MMD drops by at least half, epoch 1 -> final
    c.require(res.full_mmd.size() >= 3, "missing per-epoch MMD trace");
    const double mmd_e1 = res.full_mmd.at(1);
    const double mmd_final = res.full_mmd.back();
    c.require(mmd_final <= 0.5 * mmd_e1,
              "latent MMD fell only from " + std::to_string(mmd_e1) + " to " +
                  std::to_string(mmd_final));

    // (a) SVM-rbf cross-domain accuracy above chance with margin
    FeatureTable all = extract_features(store, (dir / "ae.ckpt").string());
    FeatureTable feat_a, feat_b;
    for (const auto& row : all.rows)
        (row.domain == DomainId::matek19 ? feat_a : feat_b).rows.push_back(row);

    folds_a = stratified_folds(man_a, 5, 7);
    ProtocolRows rows = run_protocol(feat_a, feat_b, ClassifierSpec::make(ClassifierFamily::SVM_RBF),
                                     folds_a, 7);
    const double chance_margin = 100.0 * 2.0 / 13.0;
    c.require(rows.target_cell.mean_pct > chance_margin,
              "cross-domain accuracy " + std::to_string(rows.target_cell.mean_pct) +
                  "% not above 2/13");
    std::fprintf(stderr,
                 "[e2e] src=%.2f%% tgt=%.2f%% mmd: pre=%.5f e1=%.5f final=%.5f loss: %.4f -> %.4f\n",
                 rows.source_cell.mean_pct, rows.target_cell.mean_pct, res.full_mmd.front(),
                 mmd_e1, mmd_final, res.epoch_mean_total.front(), res.epoch_mean_total.back());
}

// ---------------------------------------------------------------- criterion 9

void criterion_reference(Checker& c) {
    EvaluationReport report;
    const nlohmann::json j = report.to_json();
    c.require(j.at("metadata").contains("reference"), "report schema lacks reference rows");
    const auto& rows = j.at("metadata").at("reference").at("rows");

    auto cell = [&](const char* model, int i) { return rows.at(model).at("cells").at(i); };
    c.require(cell("bc-sam-svm(rbf)", 0).at(0) == 92.51 && cell("bc-sam-svm(rbf)", 0).at(1) == 0.4,
              "svm(rbf) matek->matek reference cell");
    c.require(cell("bc-sam-svm(rbf)", 1).at(0) == 47.50 && cell("bc-sam-svm(rbf)", 1).at(1) == 0.6,
              "svm(rbf) matek->acevedo reference cell");
    c.require(rows.at("bc-sam-ann").at("average") == 63.54, "ann reference average");
    c.require(rows.size() == 7, "reference table row count");
    // statement of scope: these are embedded for comparison only; nothing in
    // this suite asserts produced accuracies against them
    std::fprintf(stderr,
                 "[reference] full-scale accuracies are embedded as reference rows only; they "
                 "require the real corpora and GPU-scale training and are not asserted\n");
}

// --------------------------------------------------------------- criterion 10

void criterion_classifiers(Checker& c) {
    Rng rng(10);
    const int n = 200;
    Eigen::MatrixXd x(n, 50);
    std::vector<std::string> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const bool second = i % 2 == 1;
        for (int j = 0; j < 50; ++j) x(i, j) = rng.normal() + (second && j < 5 ? 4.0 : 0.0);
        y[static_cast<size_t>(i)] = second ? "pos" : "neg";
    }

    for (const char* name : {"rf", "svm_rbf", "svm_poly", "ann", "xgb"}) {
        ClassifierSpec spec = ClassifierSpec::from_name(name);
        TrainedClassifier t = fit(build_classifier(spec, 3), x, y);
        const double acc = accuracy(t.predict(x), y);
        c.require(acc >= 0.99, std::string(name) + " training accuracy " + std::to_string(acc));
    }

    const ClassifierSpec rf = ClassifierSpec::from_name("rf");
    c.require(rf.hyperparams.at("n_estimators") == 200, "rf estimators != 200");
    c.require(rf.hyperparams.at("max_depth") == 16, "rf depth != 16");
    const ClassifierSpec ann = ClassifierSpec::from_name("ann");
    c.require(ann.hyperparams.at("hidden_layers") == nlohmann::json({100}),
              "ann hidden layers != [100]");
    c.require(ClassifierSpec::from_name("svm_rbf").hyperparams.at("kernel") == "rbf",
              "svm_rbf kernel");
    c.require(ClassifierSpec::from_name("svm_poly").hyperparams.at("kernel") == "poly",
              "svm_poly kernel");
    c.require(ClassifierSpec::from_name("xgb").hyperparams.contains("n_rounds"),
              "xgb defaults missing");
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<void(Checker&)> fn;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "LoRA algebra: neutrality, factored/merged, rank bound", 10, criterion_lora},
        {2, "SSIM: identity, symmetry, direct-formula oracle", 10, criterion_ssim},
        {3, "MMD: zero-on-identical, permutation null", 60, criterion_mmd},
        {4, "composite loss exactness (total = l_ssim + 5*l_mmd)", 30, criterion_composite},
        {5, "analytic gradient vs central finite differences", 60, criterion_gradient},
        {6, "post-processing pixel invariants (1000 pairs)", 30, criterion_postprocess},
        {7, "protocol determinism and leakage", 120, criterion_protocol},
        {8, "desk-scale end-to-end (synthetic domains)", 900, criterion_desk_scale},
        {9, "reference rows embedded, not asserted", 10, criterion_reference},
        {10, "classifier sanity and hyperparameter fidelity", 120, criterion_classifiers},
    };

    int failed = 0;
    for (const auto& crit : criteria) {
        Checker c;
        const auto start = std::chrono::steady_clock::now();
        try {
            crit.fn(c);
        } catch (const std::exception& e) {
            c.failures.push_back(std::string("exception: ") + e.what());
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (elapsed > crit.budget_seconds)
            c.failures.push_back("runtime " + std::to_string(elapsed) + "s over budget " +
                                 std::to_string(crit.budget_seconds) + "s");
        if (c.failures.empty()) {
            std::printf("[PASS] criterion %2d (%6.2fs): %s\n", crit.id, elapsed, crit.name);
        } else {
            ++failed;
            std::printf("[FAIL] criterion %2d (%6.2fs): %s\n", crit.id, elapsed, crit.name);
            for (const auto& f : c.failures) std::printf("       - %s\n", f.c_str());
        }
        std::fflush(stdout);
    }
    if (failed) std::printf("%d criterion(s) failed\n", failed);
    return failed == 0 ? 0 : 1;
}
