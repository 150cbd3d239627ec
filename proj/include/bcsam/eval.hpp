#pragma once

// Cross-domain evaluation protocol: k-fold cross-validation on the source
// domain where each fold's model is tested on the held-out source fold and on
// the entire external target set. Cells aggregate mean and population std
// over folds; the report mirrors the reference table layout (trained-on /
// tested-on matrix plus a per-classifier average) and embeds the published
// full-scale numbers as reference rows for cell-by-cell comparison.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcsam/classifiers.hpp"
#include "bcsam/dataset.hpp"

namespace bcsam {

struct CellStats {
    double mean_pct = 0;
    double std_pct = 0;  // population std over folds
    std::vector<double> fold_accuracies_pct;

    static CellStats from_folds(const std::vector<double>& accuracies_pct);
};

struct ProtocolRows {
    ClassifierFamily family = ClassifierFamily::RF;
    DomainId train_domain = DomainId::matek19;
    DomainId target_domain = DomainId::acevedo20;
    int k = 5;
    CellStats source_cell;  // held-out source folds
    CellStats target_cell;  // full external set, every fold
};

// Trains per fold on src \ fold, tests on the fold and on all of tgt.
// Throws when fold ids and feature ids disagree; asserts no train/test overlap.
ProtocolRows run_protocol(const FeatureTable& features_src, const FeatureTable& features_tgt,
                          const ClassifierSpec& spec, const FoldAssignment& folds,
                          uint64_t seed);

class EvaluationReport {
public:
    int k = 5;
    // family name -> train domain -> test domain -> stats
    std::map<std::string, std::map<std::string, std::map<std::string, CellStats>>> cells;
    nlohmann::json metadata = nlohmann::json::object();

    void add_rows(const ProtocolRows& rows);

    bool complete() const;  // every family has all four cells
    std::map<std::string, double> averages() const;  // mean over the four cells

    nlohmann::json to_json() const;
    static EvaluationReport from_json(const nlohmann::json& j);
    std::string to_markdown() const;
};

// The published full-scale accuracy table; embedded in report metadata so a
// full run can be compared cell by cell. Never asserted in CI.
nlohmann::json reference_rows();

void write_report(const EvaluationReport& report, const std::string& json_path,
                  const std::string& markdown_path);
EvaluationReport load_report(const std::string& json_path);

}  // namespace bcsam
