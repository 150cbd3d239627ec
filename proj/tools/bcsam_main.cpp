// bcsam: command-line entry point for the cross-domain blood-cell pipeline.
// One JSON config drives the staged subcommands; flags override config values.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bcsam/backbone.hpp"
#include "bcsam/pipeline.hpp"
#include "bcsam/synth.hpp"

using namespace bcsam;

namespace {

void check_device_env() {
    const char* dev = std::getenv("BCSAM_DEVICE");
    if (!dev) return;
    const std::string d(dev);
    if (d != "" && d != "auto" && d != "cpu")
        std::fprintf(stderr, "warning: BCSAM_DEVICE=%s is not available; using cpu\n",
                     dev);
}

PipelineConfig load_config_or_default(const std::string& path) {
    return path.empty() ? PipelineConfig{} : PipelineConfig::load(path);
}

}  // namespace

int main(int argc, char** argv) {
    check_device_env();

    CLI::App app{"bcsam: LoRA-adapted segmentation embeddings + cross-domain autoencoder + "
                 "classical classifiers over two blood-cell corpora"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);  // print usage on bad input

    // ---- ingest ----------------------------------------------------------
    std::string in_root, in_domain, in_map = "config/label_map.json", in_out, in_folds_out;
    int in_k = 5;
    uint64_t in_seed = 0;
    auto* ingest = app.add_subcommand("ingest", "scan one domain root into a manifest");
    ingest->add_option("--root", in_root, "dataset root: <root>/<raw_label>/<image>")->required();
    ingest->add_option("--domain", in_domain, "matek19 | acevedo20")->required();
    ingest->add_option("--label-map", in_map, "label map JSON");
    ingest->add_option("--out", in_out, "manifest output (.jsonl)")->required();
    ingest->add_option("--folds-out", in_folds_out, "also write a fold assignment");
    ingest->add_option("--k", in_k, "fold count");
    ingest->add_option("--fold-seed", in_seed, "fold shuffle seed");

    // ---- config-driven stages --------------------------------------------
    std::string cfg_path;
    std::string ov_output_dir, ov_variant, ov_weights;
    auto add_cfg = [&](CLI::App* sub, bool required = true) {
        auto* opt = sub->add_option("--config", cfg_path, "pipeline config JSON");
        if (required) opt->required();
        sub->add_option("--output-dir", ov_output_dir, "override output directory");
        sub->add_option("--backbone-variant", ov_variant, "override backbone variant");
        sub->add_option("--backbone-weights", ov_weights, "override backbone weights path");
    };
    auto* finetune = app.add_subcommand("finetune-seg",
                                        "fine-tune adapters and heads on the annotated subset");
    add_cfg(finetune);
    auto* embed = app.add_subcommand("embed", "cache embeddings and post-processed targets");
    add_cfg(embed);
    auto* trainae = app.add_subcommand("train-ae", "train the cross-domain autoencoder");
    add_cfg(trainae);
    auto* featcmd = app.add_subcommand("features", "extract 50-dim features per domain");
    add_cfg(featcmd);
    auto* evalall = app.add_subcommand("evaluate",
                                       "run the k-fold cross-domain protocol (config mode, or "
                                       "single-run flags)");
    add_cfg(evalall, false);
    auto* reportcmd = app.add_subcommand("report", "merge partial evaluations into the report");
    add_cfg(reportcmd);
    auto* runall = app.add_subcommand("run-all", "run every stage from one config");
    add_cfg(runall);

    // single-run evaluate flags (spec'd interface)
    std::string ev_src, ev_tgt, ev_folds, ev_spec, ev_out;
    uint64_t ev_seed = 0;
    evalall->add_option("--features-src", ev_src, "source-domain feature CSV");
    evalall->add_option("--features-tgt", ev_tgt, "target-domain feature CSV");
    evalall->add_option("--folds", ev_folds, "fold assignment JSON for the source domain");
    evalall->add_option("--spec", ev_spec, "classifier: rf|svm_rbf|svm_poly|ann|xgb");
    evalall->add_option("--out", ev_out, "partial report JSON output");
    evalall->add_option("--seed", ev_seed, "classifier seed");

    // ---- utilities ---------------------------------------------------------
    std::string mb_variant = "vit_tiny", mb_out;
    uint64_t mb_seed = 1;
    auto* makebb = app.add_subcommand("make-backbone",
                                      "write random-init backbone weights (stand-in for a "
                                      "converted pretrained checkpoint)");
    makebb->add_option("--variant", mb_variant, "vit_b | vit_tiny");
    makebb->add_option("--seed", mb_seed, "init seed");
    makebb->add_option("--out", mb_out, "weights output path")->required();

    std::string sy_out;
    int sy_per_class = 8;
    uint64_t sy_seed = 1;
    auto* synth = app.add_subcommand("synth", "generate the synthetic two-domain fixture");
    synth->add_option("--out", sy_out, "fixture root directory")->required();
    synth->add_option("--per-class", sy_per_class, "images per class per domain");
    synth->add_option("--seed", sy_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            LabelMap map = load_label_map(in_map);
            DatasetManifest m = scan_dataset(in_root, domain_from_string(in_domain), map);
            save_manifest(m, in_out);
            std::fprintf(stderr, "stage=ingest domain=%s entries=%zu out=%s\n", in_domain.c_str(),
                         m.entries.size(), in_out.c_str());
            if (!in_folds_out.empty()) {
                FoldAssignment folds = stratified_folds(m, in_k, in_seed);
                for (const auto& w : folds.warnings)
                    std::fprintf(stderr, "stage=ingest warning=%s\n", w.c_str());
                save_folds(folds, in_folds_out);
            }
            return 0;
        }

        auto configured = [&]() {
            PipelineConfig cfg = load_config_or_default(cfg_path);
            if (!ov_output_dir.empty()) cfg.output_dir = ov_output_dir;
            if (!ov_variant.empty()) cfg.backbone_variant = ov_variant;
            if (!ov_weights.empty()) cfg.backbone_weights = ov_weights;
            return cfg;
        };

        if (*finetune) pipeline::finetune_seg(configured());
        if (*embed) pipeline::embed(configured());
        if (*trainae) pipeline::train_ae(configured());
        if (*featcmd) pipeline::features(configured());
        if (*evalall) {
            const bool single = !ev_src.empty() || !ev_tgt.empty() || !ev_spec.empty();
            if (single) {
                if (ev_src.empty() || ev_tgt.empty() || ev_folds.empty() || ev_spec.empty() ||
                    ev_out.empty())
                    throw std::invalid_argument(
                        "evaluate: single-run mode needs --features-src, --features-tgt, "
                        "--folds, --spec and --out");
                pipeline::evaluate_one(ev_src, ev_tgt, ev_folds, ev_spec, ev_seed, ev_out);
            } else if (!cfg_path.empty()) {
                pipeline::evaluate(configured());
            } else {
                throw std::invalid_argument("evaluate: pass --config or the single-run flags");
            }
        }
        if (*reportcmd) pipeline::report(configured());
        if (*runall) pipeline::run_all(configured());

        if (*makebb) {
            BackboneWeights::random_init(BackboneSpec::by_name(mb_variant), mb_seed).save(mb_out);
            std::fprintf(stderr, "stage=make-backbone variant=%s out=%s\n", mb_variant.c_str(),
                         mb_out.c_str());
        }
        if (*synth) {
            SynthConfig sc;
            sc.per_class = sy_per_class;
            sc.seed = sy_seed;
            generate_synthetic_dataset(sy_out, sc);
            std::fprintf(stderr, "stage=synth out=%s per_class=%d\n", sy_out.c_str(),
                         sy_per_class);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
