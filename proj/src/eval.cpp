#include "bcsam/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

using nlohmann::json;

namespace bcsam {

CellStats CellStats::from_folds(const std::vector<double>& accuracies_pct) {
    CellStats s;
    s.fold_accuracies_pct = accuracies_pct;
    const double n = static_cast<double>(accuracies_pct.size());
    for (double a : accuracies_pct) s.mean_pct += a;
    s.mean_pct /= n;
    for (double a : accuracies_pct) s.std_pct += (a - s.mean_pct) * (a - s.mean_pct);
    s.std_pct = std::sqrt(s.std_pct / n);
    return s;
}

namespace {

struct Split {
    Eigen::MatrixXd x;
    std::vector<std::string> y;
};

Split take(const FeatureTable& t, const std::set<std::string>& ids) {
    FeatureTable sub;
    for (const auto& row : t.rows)
        if (ids.count(row.image_id)) sub.rows.push_back(row);
    auto [x, y] = features_to_xy(sub);
    return {std::move(x), std::move(y)};
}

}  // namespace

ProtocolRows run_protocol(const FeatureTable& features_src, const FeatureTable& features_tgt,
                          const ClassifierSpec& spec, const FoldAssignment& folds,
                          uint64_t seed) {
    if (features_src.rows.empty() || features_tgt.rows.empty())
        throw std::invalid_argument("run_protocol: empty feature tables");

    std::set<std::string> src_ids;
    for (const auto& row : features_src.rows) src_ids.insert(row.image_id);
    for (const auto& row : features_src.rows)
        if (!folds.fold_of.count(row.image_id))
            throw std::invalid_argument("run_protocol: feature id not in folds: " + row.image_id);
    for (const auto& [id, f] : folds.fold_of)
        if (!src_ids.count(id))
            throw std::invalid_argument("run_protocol: fold id not in features: " + id);

    ProtocolRows out;
    out.family = spec.family;
    out.train_domain = features_src.rows.front().domain;
    out.target_domain = features_tgt.rows.front().domain;
    out.k = folds.k;

    auto [tgt_x, tgt_y] = features_to_xy(features_tgt);

    std::vector<double> src_acc, tgt_acc;
    for (int fold = 0; fold < folds.k; ++fold) {
        std::set<std::string> test_ids, train_ids;
        for (const auto& [id, f] : folds.fold_of) (f == fold ? test_ids : train_ids).insert(id);
        if (train_ids.empty() || test_ids.empty())
            throw std::runtime_error("run_protocol: fold " + std::to_string(fold) +
                                     " leaves an empty train or test split");
        // leakage check: train and source-test ids must be disjoint
        for (const auto& id : test_ids)
            if (train_ids.count(id))
                throw std::logic_error("run_protocol: train/test overlap at id " + id);

        Split train = take(features_src, train_ids);
        Split test = take(features_src, test_ids);

        TrainedClassifier model = fit(build_classifier(spec, seed), train.x, train.y);
        src_acc.push_back(100.0 * accuracy(model.predict(test.x), test.y));
        tgt_acc.push_back(100.0 * accuracy(model.predict(tgt_x), tgt_y));
        std::fprintf(stderr, "stage=evaluate spec=%s fold=%d src=%.2f tgt=%.2f\n",
                     to_string(spec.family), fold, src_acc.back(), tgt_acc.back());
    }
    out.source_cell = CellStats::from_folds(src_acc);
    out.target_cell = CellStats::from_folds(tgt_acc);
    return out;
}

void EvaluationReport::add_rows(const ProtocolRows& rows) {
    k = rows.k;
    const std::string fam = to_string(rows.family);
    const std::string train = to_string(rows.train_domain);
    const std::string tgt = to_string(rows.target_domain);
    cells[fam][train][train] = rows.source_cell;
    cells[fam][train][tgt] = rows.target_cell;
}

bool EvaluationReport::complete() const {
    for (const auto& [fam, trains] : cells) {
        int n = 0;
        for (const auto& [train, tests] : trains) n += static_cast<int>(tests.size());
        if (n != 4) return false;
    }
    return !cells.empty();
}

std::map<std::string, double> EvaluationReport::averages() const {
    std::map<std::string, double> out;
    for (const auto& [fam, trains] : cells) {
        double sum = 0;
        int n = 0;
        for (const auto& [train, tests] : trains)
            for (const auto& [test, stats] : tests) {
                sum += stats.mean_pct;
                ++n;
            }
        if (n == 4) out[fam] = sum / 4.0;
    }
    return out;
}

json EvaluationReport::to_json() const {
    json cells_j = json::object();
    for (const auto& [fam, trains] : cells) {
        json t = json::object();
        for (const auto& [train, tests] : trains) {
            json u = json::object();
            for (const auto& [test, stats] : tests)
                u[test] = {{"mean_pct", stats.mean_pct},
                           {"std_pct", stats.std_pct},
                           {"folds_pct", stats.fold_accuracies_pct}};
            t[train] = std::move(u);
        }
        cells_j[fam] = std::move(t);
    }
    std::vector<std::string> classifiers;
    for (const auto& [fam, trains] : cells) classifiers.push_back(fam);

    json avg = json::object();
    for (const auto& [fam, v] : averages()) avg[fam] = v;

    json meta = metadata;
    meta["k"] = k;
    meta["incomplete"] = !complete();
    meta["reference"] = reference_rows();

    return {{"classifiers", classifiers}, {"cells", cells_j}, {"average", avg},
            {"metadata", meta}};
}

EvaluationReport EvaluationReport::from_json(const json& j) {
    EvaluationReport r;
    r.metadata = j.at("metadata");
    r.k = r.metadata.value("k", 5);
    r.metadata.erase("reference");
    r.metadata.erase("incomplete");
    r.metadata.erase("k");
    for (const auto& [fam, trains] : j.at("cells").items())
        for (const auto& [train, tests] : trains.items())
            for (const auto& [test, stats] : tests.items()) {
                CellStats s;
                s.mean_pct = stats.at("mean_pct").get<double>();
                s.std_pct = stats.at("std_pct").get<double>();
                s.fold_accuracies_pct = stats.at("folds_pct").get<std::vector<double>>();
                r.cells[fam][train][test] = std::move(s);
            }
    return r;
}

namespace {

std::string fmt_cell(const CellStats* s) {
    if (!s) return "—";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f±%.1f", s->mean_pct, s->std_pct);
    return buf;
}

const CellStats* find_cell(
    const std::map<std::string, std::map<std::string, std::map<std::string, CellStats>>>& cells,
    const std::string& fam, const std::string& train, const std::string& test) {
    auto f = cells.find(fam);
    if (f == cells.end()) return nullptr;
    auto t = f->second.find(train);
    if (t == f->second.end()) return nullptr;
    auto u = t->second.find(test);
    return u == t->second.end() ? nullptr : &u->second;
}

}  // namespace

std::string EvaluationReport::to_markdown() const {
    // collect the (up to two) domains seen in the cells, in fixed order
    std::vector<std::string> domains = {"matek19", "acevedo20"};

    std::string md;
    md += "| Trained on | " + domains[0] + " | " + domains[0] + " | " + domains[1] + " | " +
          domains[1] + " | Average(%) |\n";
    md += "|---|---|---|---|---|---|\n";
    md += "| Tested on | " + domains[0] + "(%) | " + domains[1] + "(%) | " + domains[0] +
          "(%) | " + domains[1] + "(%) | |\n";

    const auto avg = averages();
    for (const auto& [fam, trains] : cells) {
        md += "| bcsam-" + fam + " | ";
        md += fmt_cell(find_cell(cells, fam, domains[0], domains[0])) + " | ";
        md += fmt_cell(find_cell(cells, fam, domains[0], domains[1])) + " | ";
        md += fmt_cell(find_cell(cells, fam, domains[1], domains[0])) + " | ";
        md += fmt_cell(find_cell(cells, fam, domains[1], domains[1])) + " | ";
        if (avg.count(fam)) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", avg.at(fam));
            md += std::string(buf) + " |\n";
        } else {
            md += "— |\n";
        }
    }
    if (!complete()) md += "\n_incomplete: some cells have not been evaluated._\n";

    md += "\n### Reference (reported full-scale results; not reproduced here)\n\n";
    md += "| Model | " + domains[0] + "→" + domains[0] + " | " + domains[0] + "→" + domains[1] +
          " | " + domains[1] + "→" + domains[0] + " | " + domains[1] + "→" + domains[1] +
          " | Average(%) |\n";
    md += "|---|---|---|---|---|---|\n";
    const json ref = reference_rows();
    for (const auto& [name, row] : ref.at("rows").items()) {
        md += "| " + name + " | ";
        for (const auto& cell : row.at("cells")) {
            char buf[48];
            if (cell.at(1).is_null())
                std::snprintf(buf, sizeof(buf), "%.2f", cell.at(0).get<double>());
            else
                std::snprintf(buf, sizeof(buf), "%.2f±%.1f", cell.at(0).get<double>(),
                              cell.at(1).get<double>());
            md += std::string(buf) + " | ";
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", row.at("average").get<double>());
        md += std::string(buf) + " |\n";
    }
    return md;
}

json reference_rows() {
    // cells are [mean, std-or-null] in the order
    // matek->matek, matek->acevedo, acevedo->matek, acevedo->acevedo
    json rows = json::object();
    auto row = [&](const char* name, json cells, double average) {
        rows[name] = {{"cells", std::move(cells)}, {"average", average}};
    };
    row("resnext", json::array({{96.10, nullptr}, {8.10, nullptr}, {7.30, 3.1}, {85.70, 2.4}}),
        49.30);
    row("ae-cfe-rf", json::array({{83.70, 0.5}, {21.90, 0.4}, {45.10, 0.5}, {65.20, 0.5}}),
        53.98);
    row("bc-sam-rf", json::array({{89.03, 0.4}, {24.07, 0.4}, {51.94, 0.8}, {70.41, 1.0}}),
        58.86);
    row("bc-sam-svm(poly)", json::array({{90.95, 0.4}, {24.77, 0.6}, {50.67, 0.4}, {72.99, 0.4}}),
        59.85);
    row("bc-sam-xgboost", json::array({{91.41, 0.5}, {36.84, 1.0}, {49.22, 1.0}, {74.52, 0.7}}),
        63.00);
    row("bc-sam-svm(rbf)", json::array({{92.51, 0.4}, {47.50, 0.6}, {34.53, 1.3}, {78.27, 0.5}}),
        63.20);
    row("bc-sam-ann", json::array({{92.28, 0.3}, {41.21, 1.0}, {42.93, 2.4}, {77.74, 0.9}}),
        63.54);
    return {{"note", "published full-scale results; requires the real corpora and GPU-scale "
                     "training, embedded for cell-by-cell comparison only"},
            {"rows", rows}};
}

void write_report(const EvaluationReport& report, const std::string& json_path,
                  const std::string& markdown_path) {
    {
        std::ofstream out(json_path);
        if (!out) throw std::runtime_error("cannot write report: " + json_path);
        out << report.to_json().dump(2) << "\n";
    }
    std::ofstream md(markdown_path);
    if (!md) throw std::runtime_error("cannot write report: " + markdown_path);
    md << report.to_markdown();
}

EvaluationReport load_report(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("cannot open report: " + json_path);
    json j;
    in >> j;
    return EvaluationReport::from_json(j);
}

}  // namespace bcsam
