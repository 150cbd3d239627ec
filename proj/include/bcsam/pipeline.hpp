#pragma once

// Declarative pipeline configuration and the stage functions the CLI wraps.
// One JSON config drives every stage; flags override config, config overrides
// defaults, and each run drops a resolved-config snapshot into the output
// directory so results can be replayed byte for byte.

#include <string>
#include <vector>

#include <json.hpp>

#include "bcsam/autoencoder.hpp"
#include "bcsam/eval.hpp"
#include "bcsam/segmenter.hpp"

namespace bcsam {

struct PipelineConfig {
    // data
    std::string matek19_root;
    std::string acevedo20_root;
    std::string label_map_path = "config/label_map.json";
    std::string masks_root;  // <masks_root>/<image_id>.png mask annotations

    // backbone
    std::string backbone_variant = "vit_b";  // vit_b | vit_tiny | stub
    std::string backbone_weights;

    // adapters
    int lora_r = 4;
    std::vector<std::string> lora_targets = {"q", "v"};

    // optimization (defaults from the published setup)
    double lr = 0.0005;
    double weight_decay = 0.05;
    int epochs_seg = 85;
    int epochs_ae = 10;
    double warmup_frac = 0.1;
    int batch = 16;
    uint64_t seed = 0;
    double lambda = 5.0;

    double annotation_fraction = 0.01;
    int fold_k = 5;
    uint64_t fold_seed = 0;
    int target_size = 256;  // reconstruction target side; must be a power of two

    std::vector<std::string> classifiers = {"rf", "svm_rbf", "svm_poly", "ann", "xgb"};
    std::string output_dir = "out";

    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::string& path);
    nlohmann::json to_json() const;
    void validate() const;

    // derived locations inside output_dir
    std::string manifest_path(DomainId d) const;
    std::string folds_path(DomainId d) const;
    std::string seg_checkpoint_path() const;
    std::string store_dir() const;
    std::string ae_checkpoint_path() const;
    std::string features_path(DomainId d) const;
    std::string partial_report_path(const std::string& spec, DomainId train) const;
    std::string report_json_path() const;
    std::string report_md_path() const;
};

namespace pipeline {

void write_config_snapshot(const PipelineConfig& cfg);

void ingest(const PipelineConfig& cfg);
void finetune_seg(const PipelineConfig& cfg);
void embed(const PipelineConfig& cfg);
void train_ae(const PipelineConfig& cfg);
void features(const PipelineConfig& cfg);
void evaluate(const PipelineConfig& cfg);
void report(const PipelineConfig& cfg);
void run_all(const PipelineConfig& cfg);

// shared by the `evaluate` subcommand and the config-driven stage
void evaluate_one(const std::string& features_src_path, const std::string& features_tgt_path,
                  const std::string& folds_path, const std::string& spec_name, uint64_t seed,
                  const std::string& out_path);

// merges partial report JSONs into the final report pair
void merge_reports(const std::vector<std::string>& partial_paths, const std::string& json_out,
                   const std::string& md_out);

}  // namespace pipeline

}  // namespace bcsam
