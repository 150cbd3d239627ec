#include "bcsam/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "bcsam/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bcsam {

namespace {

std::string read_file(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + p);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int log2_exact(int n) {
    int d = 0;
    while ((1 << d) < n) ++d;
    if ((1 << d) != n) throw std::invalid_argument("target_size must be a power of two");
    return d;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        c.matek19_root = d.value("matek19_root", c.matek19_root);
        c.acevedo20_root = d.value("acevedo20_root", c.acevedo20_root);
        c.label_map_path = d.value("label_map", c.label_map_path);
        c.masks_root = d.value("masks_root", c.masks_root);
    }
    if (j.contains("backbone")) {
        c.backbone_variant = j.at("backbone").value("variant", c.backbone_variant);
        c.backbone_weights = j.at("backbone").value("weights", c.backbone_weights);
    }
    if (j.contains("lora")) {
        c.lora_r = j.at("lora").value("r", c.lora_r);
        c.lora_targets = j.at("lora").value("targets", c.lora_targets);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        c.lr = t.value("lr", c.lr);
        c.weight_decay = t.value("weight_decay", c.weight_decay);
        c.epochs_seg = t.value("epochs_seg", c.epochs_seg);
        c.epochs_ae = t.value("epochs_ae", c.epochs_ae);
        c.warmup_frac = t.value("warmup_frac", c.warmup_frac);
        c.batch = t.value("batch", c.batch);
        c.seed = t.value("seed", c.seed);
    }
    c.lambda = j.value("lambda", c.lambda);
    c.annotation_fraction = j.value("annotation_fraction", c.annotation_fraction);
    if (j.contains("folds")) {
        c.fold_k = j.at("folds").value("k", c.fold_k);
        c.fold_seed = j.at("folds").value("seed", c.fold_seed);
    }
    c.target_size = j.value("target_size", c.target_size);
    c.classifiers = j.value("classifiers", c.classifiers);
    c.output_dir = j.value("output_dir", c.output_dir);
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

json PipelineConfig::to_json() const {
    return {{"data",
             {{"matek19_root", matek19_root},
              {"acevedo20_root", acevedo20_root},
              {"label_map", label_map_path},
              {"masks_root", masks_root}}},
            {"backbone", {{"variant", backbone_variant}, {"weights", backbone_weights}}},
            {"lora", {{"r", lora_r}, {"targets", lora_targets}}},
            {"training",
             {{"lr", lr},
              {"weight_decay", weight_decay},
              {"epochs_seg", epochs_seg},
              {"epochs_ae", epochs_ae},
              {"warmup_frac", warmup_frac},
              {"batch", batch},
              {"seed", seed}}},
            {"lambda", lambda},
            {"annotation_fraction", annotation_fraction},
            {"folds", {{"k", fold_k}, {"seed", fold_seed}}},
            {"target_size", target_size},
            {"classifiers", classifiers},
            {"output_dir", output_dir}};
}

void PipelineConfig::validate() const {
    if (matek19_root.empty() || acevedo20_root.empty())
        throw std::invalid_argument("config: both dataset roots are required");
    if (backbone_variant != "vit_b" && backbone_variant != "vit_tiny" &&
        backbone_variant != "stub")
        throw std::invalid_argument("config: backbone variant must be vit_b, vit_tiny or stub");
    if (backbone_variant != "stub" && backbone_weights.empty())
        throw std::invalid_argument("config: backbone weights path required for " +
                                    backbone_variant);
    log2_exact(target_size);
    for (const auto& s : classifiers) classifier_family_from_string(s);
    if (fold_k < 2) throw std::invalid_argument("config: folds.k must be >= 2");
}

std::string PipelineConfig::manifest_path(DomainId d) const {
    return output_dir + "/manifest_" + to_string(d) + ".jsonl";
}
std::string PipelineConfig::folds_path(DomainId d) const {
    return output_dir + "/folds_" + to_string(d) + ".json";
}
std::string PipelineConfig::seg_checkpoint_path() const { return output_dir + "/segmenter.ckpt"; }
std::string PipelineConfig::store_dir() const { return output_dir + "/store"; }
std::string PipelineConfig::ae_checkpoint_path() const { return output_dir + "/ae.ckpt"; }
std::string PipelineConfig::features_path(DomainId d) const {
    return output_dir + "/features_" + to_string(d) + ".csv";
}
std::string PipelineConfig::partial_report_path(const std::string& spec, DomainId train) const {
    return output_dir + "/partials/eval_" + spec + "_" + to_string(train) + ".json";
}
std::string PipelineConfig::report_json_path() const { return output_dir + "/report.json"; }
std::string PipelineConfig::report_md_path() const { return output_dir + "/report.md"; }

namespace pipeline {

namespace {

std::unique_ptr<Embedder> make_embedder(const PipelineConfig& cfg) {
    if (cfg.backbone_variant == "stub")
        return std::make_unique<StubEmbedder>(cfg.seed + 17);
    LoRAConfig lora;
    lora.r = cfg.lora_r;
    lora.targets = cfg.lora_targets;
    auto model = AdaptedBackbone::attach(cfg.backbone_weights, lora, cfg.seed);
    if (fs::exists(cfg.seg_checkpoint_path())) {
        model->load_trainable(cfg.seg_checkpoint_path());
        std::fprintf(stderr, "stage=embed msg=loaded_segmenter_checkpoint path=%s\n",
                     cfg.seg_checkpoint_path().c_str());
    } else {
        std::fprintf(stderr,
                     "stage=embed msg=no_segmenter_checkpoint (zero-init adapters, frozen "
                     "backbone behavior)\n");
    }
    return model;
}

DatasetManifest load_domain_manifest(const PipelineConfig& cfg, DomainId d) {
    return load_manifest(cfg.manifest_path(d));
}

}  // namespace

void write_config_snapshot(const PipelineConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    std::ofstream out(cfg.output_dir + "/config_resolved.json");
    if (!out) throw std::runtime_error("cannot write config snapshot");
    out << cfg.to_json().dump(2) << "\n";
}

void ingest(const PipelineConfig& cfg) {
    cfg.validate();
    write_config_snapshot(cfg);
    LabelMap map = load_label_map(cfg.label_map_path);
    for (DomainId d : {DomainId::matek19, DomainId::acevedo20}) {
        const std::string root =
            d == DomainId::matek19 ? cfg.matek19_root : cfg.acevedo20_root;
        DatasetManifest manifest = scan_dataset(root, d, map);
        save_manifest(manifest, cfg.manifest_path(d));
        FoldAssignment folds = stratified_folds(manifest, cfg.fold_k, cfg.fold_seed);
        for (const auto& w : folds.warnings)
            std::fprintf(stderr, "stage=ingest warning=%s\n", w.c_str());
        save_folds(folds, cfg.folds_path(d));
        std::fprintf(stderr, "stage=ingest domain=%s entries=%zu\n", to_string(d),
                     manifest.entries.size());
    }
}

void finetune_seg(const PipelineConfig& cfg) {
    cfg.validate();
    write_config_snapshot(cfg);
    if (cfg.backbone_variant == "stub") {
        std::fprintf(stderr, "stage=finetune-seg msg=skipped (stub embedder has no parameters)\n");
        return;
    }
    if (cfg.masks_root.empty())
        throw std::invalid_argument("finetune-seg: masks_root is required");

    // annotated subset drawn from both domains
    std::vector<std::pair<CellImage, SegmentationMask>> annotated;
    for (DomainId d : {DomainId::matek19, DomainId::acevedo20}) {
        DatasetManifest manifest = load_domain_manifest(cfg, d);
        const auto subset = select_annotation_subset(manifest, cfg.annotation_fraction, cfg.seed);
        std::map<std::string, const ManifestEntry*> by_id;
        for (const auto& e : manifest.entries) by_id[e.image_id] = &e;
        for (const auto& id : subset) {
            const fs::path mask_path = fs::path(cfg.masks_root) / (id);
            if (!fs::exists(mask_path))
                throw std::runtime_error("finetune-seg: missing mask annotation for " + id +
                                         " (expected " + mask_path.string() + ")");
            MaskU8 mask = load_mask_png(mask_path.string());
            if (mask.height != kCellImageSize || mask.width != kCellImageSize) {
                // masks are stored at source resolution; bring them onto the 224 grid
                ImageF m1(1, mask.height, mask.width);
                for (size_t i = 0; i < mask.data.size(); ++i)
                    m1.data[i] = static_cast<float>(mask.data[i]);
                ImageF r = resize_bilinear(m1, kCellImageSize, kCellImageSize);
                MaskU8 resized(kCellImageSize, kCellImageSize);
                for (size_t i = 0; i < resized.data.size(); ++i)
                    resized.data[i] = r.data[i] > 0.5f ? 1 : 0;
                mask = std::move(resized);
            }
            annotated.emplace_back(load_image(*by_id.at(id)), std::move(mask));
        }
    }
    std::fprintf(stderr, "stage=finetune-seg annotated=%zu fraction=%.4f\n", annotated.size(),
                 cfg.annotation_fraction);

    LoRAConfig lora;
    lora.r = cfg.lora_r;
    lora.targets = cfg.lora_targets;
    auto model = AdaptedBackbone::attach(cfg.backbone_weights, lora, cfg.seed);
    SegTrainConfig tc;
    tc.lr = cfg.lr;
    tc.weight_decay = cfg.weight_decay;
    tc.epochs = cfg.epochs_seg;
    tc.warmup_frac = cfg.warmup_frac;
    tc.seed = cfg.seed;
    finetune_segmentation(*model, annotated, tc, cfg.seg_checkpoint_path());
}

void embed(const PipelineConfig& cfg) {
    cfg.validate();
    write_config_snapshot(cfg);
    auto embedder = make_embedder(cfg);
    EmbeddingStore store = EmbeddingStore::open(cfg.store_dir());
    for (DomainId d : {DomainId::matek19, DomainId::acevedo20}) {
        DatasetManifest manifest = load_domain_manifest(cfg, d);
        cache_embeddings(manifest, *embedder, store, cfg.target_size);
        std::fprintf(stderr, "stage=embed domain=%s store_size=%zu\n", to_string(d),
                     store.size());
    }
}

void train_ae(const PipelineConfig& cfg) {
    cfg.validate();
    write_config_snapshot(cfg);
    EmbeddingStore store = EmbeddingStore::open(cfg.store_dir());
    if (store.size() == 0)
        throw std::runtime_error("train-ae: embedding store is empty; run embed first");

    AETrainConfig tc;
    tc.lr = cfg.lr;
    tc.weight_decay = cfg.weight_decay;
    tc.epochs = cfg.epochs_ae;
    tc.batch_size = cfg.batch;
    tc.warmup_frac = cfg.warmup_frac;
    tc.lambda = cfg.lambda;
    tc.seed = cfg.seed;
    tc.arch.in_channels = static_cast<int>(store.entry(store.ids().front()).emb_shape.at(0));
    tc.arch.decoder_doublings = log2_exact(cfg.target_size);
    tc.arch.decoder_channels = default_decoder_channels(tc.arch.decoder_doublings);
    train_autoencoder(store, tc, cfg.ae_checkpoint_path());
}

void features(const PipelineConfig& cfg) {
    cfg.validate();
    write_config_snapshot(cfg);
    EmbeddingStore store = EmbeddingStore::open(cfg.store_dir());
    FeatureTable all = extract_features(store, cfg.ae_checkpoint_path());
    for (DomainId d : {DomainId::matek19, DomainId::acevedo20}) {
        FeatureTable sub;
        for (const auto& row : all.rows)
            if (row.domain == d) sub.rows.push_back(row);
        save_feature_table(sub, cfg.features_path(d));
        std::fprintf(stderr, "stage=features domain=%s rows=%zu\n", to_string(d),
                     sub.rows.size());
    }
}

void evaluate_one(const std::string& features_src_path, const std::string& features_tgt_path,
                  const std::string& folds_path, const std::string& spec_name, uint64_t seed,
                  const std::string& out_path) {
    FeatureTable src = load_feature_table(features_src_path);
    FeatureTable tgt = load_feature_table(features_tgt_path);
    FoldAssignment folds = load_folds(folds_path);
    ClassifierSpec spec = ClassifierSpec::from_name(spec_name);

    ProtocolRows rows = run_protocol(src, tgt, spec, folds, seed);

    EvaluationReport partial;
    partial.add_rows(rows);
    partial.metadata["runs"][spec_name + ":" + to_string(rows.train_domain)] = {
        {"seed", seed},
        {"folds_hash", fnv1a64_hex(read_file(folds_path))},
        {"features_src_hash", fnv1a64_hex(read_file(features_src_path))},
        {"features_tgt_hash", fnv1a64_hex(read_file(features_tgt_path))}};
    partial.metadata["hyperparameters"][spec_name] = spec.hyperparams;
    if (spec.needs_scaling()) partial.metadata["standardized"][spec_name] = true;

    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? "."
                               : fs::path(out_path).parent_path().string());
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write report: " + out_path);
    out << partial.to_json().dump(2) << "\n";
}

void evaluate(const PipelineConfig& cfg) {
    cfg.validate();
    write_config_snapshot(cfg);
    for (const auto& spec : cfg.classifiers) {
        evaluate_one(cfg.features_path(DomainId::matek19), cfg.features_path(DomainId::acevedo20),
                     cfg.folds_path(DomainId::matek19), spec, cfg.seed,
                     cfg.partial_report_path(spec, DomainId::matek19));
        evaluate_one(cfg.features_path(DomainId::acevedo20), cfg.features_path(DomainId::matek19),
                     cfg.folds_path(DomainId::acevedo20), spec, cfg.seed,
                     cfg.partial_report_path(spec, DomainId::acevedo20));
    }
}

void merge_reports(const std::vector<std::string>& partial_paths, const std::string& json_out,
                   const std::string& md_out) {
    EvaluationReport merged;
    json runs = json::object();
    json hyper = json::object();
    json standardized = json::object();
    for (const auto& p : partial_paths) {
        json j = json::parse(read_file(p));
        EvaluationReport part = EvaluationReport::from_json(j);
        for (const auto& [fam, trains] : part.cells)
            for (const auto& [train, tests] : trains)
                for (const auto& [test, stats] : tests) merged.cells[fam][train][test] = stats;
        merged.k = part.k;
        const auto& meta = j.at("metadata");
        if (meta.contains("runs")) runs.update(meta.at("runs"));
        if (meta.contains("hyperparameters")) hyper.update(meta.at("hyperparameters"));
        if (meta.contains("standardized")) standardized.update(meta.at("standardized"));
    }
    merged.metadata["runs"] = runs;
    merged.metadata["hyperparameters"] = hyper;
    merged.metadata["standardized"] = standardized;
    merged.metadata["notes"] = {
        {"std", "population std over the k fold accuracies"},
        {"autoencoder", "trained once on both domains (unsupervised, label-free); only "
                        "classifiers are refit per fold"}};
    write_report(merged, json_out, md_out);
}

void report(const PipelineConfig& cfg) {
    cfg.validate();
    std::vector<std::string> partials;
    for (const auto& spec : cfg.classifiers) {
        partials.push_back(cfg.partial_report_path(spec, DomainId::matek19));
        partials.push_back(cfg.partial_report_path(spec, DomainId::acevedo20));
    }
    merge_reports(partials, cfg.report_json_path(), cfg.report_md_path());
    std::fprintf(stderr, "stage=report json=%s md=%s\n", cfg.report_json_path().c_str(),
                 cfg.report_md_path().c_str());
}

void run_all(const PipelineConfig& cfg) {
    ingest(cfg);
    finetune_seg(cfg);
    embed(cfg);
    train_ae(cfg);
    features(cfg);
    evaluate(cfg);
    report(cfg);
}

}  // namespace pipeline

}  // namespace bcsam
