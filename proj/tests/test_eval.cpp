#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "bcsam/eval.hpp"
#include "bcsam/rng.hpp"

using namespace bcsam;

namespace {

// separable 3-class feature table in 50 dims
FeatureTable separable_table(DomainId domain, int per_class, uint64_t seed, double sep = 6.0) {
    Rng rng(seed);
    FeatureTable t;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < per_class; ++i) {
            FeatureRow row;
            row.image_id = std::string(to_string(domain)) + "/c" + std::to_string(c) + "/" +
                           std::to_string(i);
            row.domain = domain;
            row.label = "class" + std::to_string(c);
            row.z.resize(50);
            for (int j = 0; j < 50; ++j)
                row.z[static_cast<size_t>(j)] = rng.normal() + (j % 3 == c ? sep : 0.0);
            t.rows.push_back(std::move(row));
        }
    std::sort(t.rows.begin(), t.rows.end(),
              [](const FeatureRow& a, const FeatureRow& b) { return a.image_id < b.image_id; });
    return t;
}

FoldAssignment folds_for(const FeatureTable& t, int k, uint64_t seed) {
    DatasetManifest m;
    for (const auto& row : t.rows) {
        ManifestEntry e;
        e.image_id = row.image_id;
        e.unified_label = row.label;
        e.domain = row.domain;
        m.entries.push_back(std::move(e));
    }
    return stratified_folds(m, k, seed);
}

}  // namespace

TEST_CASE("run_protocol: separable data scores ~100 in both cells") {
    FeatureTable src = separable_table(DomainId::matek19, 10, 3);
    FeatureTable tgt = separable_table(DomainId::acevedo20, 10, 4);
    FoldAssignment folds = folds_for(src, 5, 1);

    ProtocolRows rows = run_protocol(src, tgt, ClassifierSpec::make(ClassifierFamily::SVM_RBF),
                                     folds, 9);
    CHECK(rows.k == 5);
    CHECK(rows.source_cell.fold_accuracies_pct.size() == 5);
    CHECK(rows.target_cell.fold_accuracies_pct.size() == 5);
    CHECK(rows.source_cell.mean_pct > 99.0);
    CHECK(rows.target_cell.mean_pct > 99.0);
}

TEST_CASE("run_protocol: id mismatches are errors") {
    FeatureTable src = separable_table(DomainId::matek19, 6, 5);
    FeatureTable tgt = separable_table(DomainId::acevedo20, 6, 6);
    FoldAssignment folds = folds_for(src, 5, 2);

    FoldAssignment extra = folds;
    extra.fold_of["matek19/zz/extra"] = 0;
    CHECK_THROWS_AS(run_protocol(src, tgt, ClassifierSpec::make(ClassifierFamily::RF), extra, 1),
                    std::invalid_argument);

    FoldAssignment missing = folds;
    missing.fold_of.erase(missing.fold_of.begin());
    CHECK_THROWS_AS(run_protocol(src, tgt, ClassifierSpec::make(ClassifierFamily::RF), missing, 1),
                    std::invalid_argument);
}

TEST_CASE("cell statistics: identical folds give zero std") {
    CellStats s = CellStats::from_folds({80.0, 80.0, 80.0, 80.0, 80.0});
    CHECK(s.mean_pct == 80.0);
    CHECK(s.std_pct == 0.0);

    CellStats v = CellStats::from_folds({100.0, 0.0});
    CHECK(v.mean_pct == 50.0);
    CHECK(v.std_pct == 50.0);  // population std
}

TEST_CASE("report assembly, averages, JSON round-trip, determinism") {
    FeatureTable src = separable_table(DomainId::matek19, 8, 7);
    FeatureTable tgt = separable_table(DomainId::acevedo20, 8, 8);
    FoldAssignment f_src = folds_for(src, 5, 3);
    FoldAssignment f_tgt = folds_for(tgt, 5, 3);

    const ClassifierSpec spec = ClassifierSpec::make(ClassifierFamily::RF);
    EvaluationReport report;
    report.add_rows(run_protocol(src, tgt, spec, f_src, 11));
    CHECK_FALSE(report.complete());
    report.add_rows(run_protocol(tgt, src, spec, f_tgt, 11));
    CHECK(report.complete());

    const auto avg = report.averages();
    REQUIRE(avg.count("rf"));
    // average equals the arithmetic mean of the four cells
    double sum = 0;
    for (const auto& [train, tests] : report.cells.at("rf"))
        for (const auto& [test, stats] : tests) sum += stats.mean_pct;
    CHECK(avg.at("rf") == doctest::Approx(sum / 4.0).epsilon(1e-12));

    // byte-identical determinism for identical inputs
    EvaluationReport again;
    again.add_rows(run_protocol(src, tgt, spec, f_src, 11));
    again.add_rows(run_protocol(tgt, src, spec, f_tgt, 11));
    CHECK(report.to_json().dump(2) == again.to_json().dump(2));

    // round trip preserves the cells
    EvaluationReport back = EvaluationReport::from_json(report.to_json());
    CHECK(back.cells.at("rf").at("matek19").at("acevedo20").mean_pct ==
          report.cells.at("rf").at("matek19").at("acevedo20").mean_pct);

    // aggregation correctness: recompute mean/std from stored folds
    for (const auto& [train, tests] : back.cells.at("rf"))
        for (const auto& [test, stats] : tests) {
            CellStats re = CellStats::from_folds(stats.fold_accuracies_pct);
            CHECK(re.mean_pct == doctest::Approx(stats.mean_pct).epsilon(1e-12));
            CHECK(re.std_pct == doctest::Approx(stats.std_pct).epsilon(1e-12));
        }
}

TEST_CASE("markdown mirrors the reference-table layout") {
    FeatureTable src = separable_table(DomainId::matek19, 6, 9);
    FeatureTable tgt = separable_table(DomainId::acevedo20, 6, 10);
    EvaluationReport report;
    report.add_rows(run_protocol(src, tgt, ClassifierSpec::make(ClassifierFamily::RF),
                                 folds_for(src, 5, 4), 2));

    const std::string md = report.to_markdown();
    CHECK(md.find("Trained on") != std::string::npos);
    CHECK(md.find("Tested on") != std::string::npos);
    CHECK(md.find("bcsam-rf") != std::string::npos);
    CHECK(md.find("—") != std::string::npos);  // missing direction renders as dash
    CHECK(md.find("incomplete") != std::string::npos);
    // reference rows are embedded
    CHECK(md.find("92.51±0.4") != std::string::npos);
    CHECK(md.find("63.54") != std::string::npos);
}

TEST_CASE("reference rows carry the published values") {
    const auto ref = reference_rows();
    const auto& rbf = ref.at("rows").at("bc-sam-svm(rbf)");
    CHECK(rbf.at("cells")[0][0] == 92.51);
    CHECK(rbf.at("cells")[1][0] == 47.50);
    CHECK(rbf.at("cells")[2][0] == 34.53);
    CHECK(rbf.at("cells")[3][0] == 78.27);
    CHECK(ref.at("rows").at("bc-sam-ann").at("average") == 63.54);
    // baseline std for resnext's first cells is unstated in the source table
    CHECK(ref.at("rows").at("resnext").at("cells")[0][1].is_null());
}

TEST_CASE("empty report renders dashes and the incomplete flag") {
    EvaluationReport report;
    CHECK_FALSE(report.complete());
    nlohmann::json j = report.to_json();
    CHECK(j.at("metadata").at("incomplete") == true);
    CHECK(j.at("classifiers").empty());
}
