#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "bcsam/dataset.hpp"
#include "bcsam/rng.hpp"

using namespace bcsam;
namespace fs = std::filesystem;

#ifndef BCSAM_SOURCE_DIR
#define BCSAM_SOURCE_DIR "."
#endif

namespace {

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("bcsam_ds_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

void write_solid_png(const fs::path& p, int h, int w, float r, float g, float b) {
    ImageF img(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        }
    save_png(img, p.string());
}

LabelMap tiny_map() {
    LabelMap m;
    m.rules["matek19"]["EOS"] = "eosinophil";
    m.rules["matek19"]["BAS"] = "basophil";
    return m;
}

DatasetManifest synthetic_manifest(const std::map<std::string, int>& class_sizes) {
    DatasetManifest m;
    for (const auto& [cls, n] : class_sizes)
        for (int i = 0; i < n; ++i) {
            ManifestEntry e;
            e.image_id = "matek19/" + cls + "/img" + std::to_string(i) + ".png";
            e.path = e.image_id;
            e.domain = DomainId::matek19;
            e.raw_label = cls;
            e.unified_label = cls;
            m.entries.push_back(std::move(e));
        }
    return m;
}

}  // namespace

TEST_CASE("shipped label map covers exactly 13 classes") {
    const auto p = fs::path(BCSAM_SOURCE_DIR) / "config" / "label_map.json";
    LabelMap map = load_label_map(p.string());
    CHECK(map.unified_classes().size() == 13);
    CHECK(map.raw_label_count() >= 13);
    CHECK(map.rules.at("matek19").size() == 15);
    CHECK(map.rules.at("acevedo20").size() == 8);
    CHECK(map.rules.at("matek19").at("EOS") == "eosinophil");
    CHECK_FALSE(map.content_hash().empty());
}

TEST_CASE("scan_dataset: counts, ids, mapping, error paths") {
    TmpDir tmp("scan");
    for (const char* label : {"EOS", "BAS"}) {
        fs::create_directories(tmp.path / label);
        for (int i = 0; i < 3; ++i)
            write_solid_png(tmp.path / label / ("img" + std::to_string(i) + ".png"), 12, 12,
                            0.5f, 0.5f, 0.5f);
    }
    // non-image files are ignored
    std::ofstream(tmp.path / "EOS" / "notes.txt") << "x";

    LabelMap map = tiny_map();
    DatasetManifest m = scan_dataset(tmp.path.string(), DomainId::matek19, map);
    CHECK(m.entries.size() == 6);
    CHECK(m.created_with_mapping_hash == map.content_hash());

    std::set<std::string> ids;
    for (const auto& e : m.entries) {
        ids.insert(e.image_id);
        CHECK(e.domain == DomainId::matek19);
    }
    CHECK(ids.size() == 6);  // unique ids

    // EOS maps to eosinophil
    bool saw_eos = false;
    for (const auto& e : m.entries)
        if (e.raw_label == "EOS") {
            CHECK(e.unified_label == "eosinophil");
            saw_eos = true;
        }
    CHECK(saw_eos);

    // unknown label directory -> hard error naming it
    fs::create_directories(tmp.path / "XYZ");
    write_solid_png(tmp.path / "XYZ" / "a.png", 8, 8, 0.1f, 0.2f, 0.3f);
    try {
        scan_dataset(tmp.path.string(), DomainId::matek19, map);
        FAIL("expected error for unknown label");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("XYZ") != std::string::npos);
    }

    TmpDir empty("empty");
    CHECK_THROWS_AS(scan_dataset(empty.path.string(), DomainId::matek19, map),
                    std::runtime_error);
    CHECK_THROWS_AS(scan_dataset((empty.path / "missing").string(), DomainId::matek19, map),
                    std::runtime_error);
}

TEST_CASE("load_image: resize to 224, range, identity, constant white") {
    TmpDir tmp("load");
    fs::create_directories(tmp.path / "EOS");

    write_solid_png(tmp.path / "EOS" / "big.png", 400, 400, 1.f, 1.f, 1.f);
    write_solid_png(tmp.path / "EOS" / "exact.png", 224, 224, 0.25f, 0.5f, 0.75f);

    DatasetManifest m = scan_dataset(tmp.path.string(), DomainId::matek19, tiny_map());
    REQUIRE(m.entries.size() == 2);

    for (const auto& e : m.entries) {
        CellImage c = load_image(e);
        CHECK(c.image.channels == 3);
        CHECK(c.image.height == 224);
        CHECK(c.image.width == 224);
        for (float v : c.image.data) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
        if (e.image_id.find("big") != std::string::npos) {
            // constant white survives resize exactly
            for (float v : c.image.data) CHECK(v == 1.f);
        }
        if (e.image_id.find("exact") != std::string::npos) {
            // 224x224 input: resize is the identity
            CHECK(c.image.at(0, 100, 100) == doctest::Approx(0.25f).epsilon(0.01));
            CHECK(c.image.at(1, 100, 100) == doctest::Approx(0.5f).epsilon(0.01));
            CHECK(c.image.at(2, 100, 100) == doctest::Approx(0.75f).epsilon(0.01));
        }
    }

    ManifestEntry bad;
    bad.image_id = "matek19/EOS/none.png";
    bad.path = (tmp.path / "EOS" / "none.png").string();
    try {
        load_image(bad);
        FAIL("expected error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("matek19/EOS/none.png") != std::string::npos);
    }
}

TEST_CASE("stratified_folds: balanced partition") {
    DatasetManifest m = synthetic_manifest({{"a", 10}});
    FoldAssignment f = stratified_folds(m, 5, 7);
    CHECK(f.fold_of.size() == 10);
    std::map<int, int> sizes;
    for (const auto& [id, fold] : f.fold_of) sizes[fold]++;
    for (int i = 0; i < 5; ++i) CHECK(sizes[i] == 2);
    CHECK(f.warnings.empty());
}

TEST_CASE("stratified_folds: per-class balance over 13 classes") {
    std::map<std::string, int> sizes;
    for (int c = 0; c < 13; ++c) sizes["class" + std::to_string(c)] = 50;
    DatasetManifest m = synthetic_manifest(sizes);
    FoldAssignment f = stratified_folds(m, 5, 3);

    // exhaustive count: every class contributes exactly 10 ids per fold
    std::map<std::string, std::map<int, int>> per_class;
    for (const auto& e : m.entries) per_class[e.unified_label][f.fold_of.at(e.image_id)]++;
    for (const auto& [cls, folds] : per_class)
        for (int i = 0; i < 5; ++i) CHECK(folds.at(i) == 10);
}

TEST_CASE("stratified_folds: deterministic under manifest shuffling") {
    std::map<std::string, int> sizes = {{"a", 13}, {"b", 7}, {"c", 5}};
    DatasetManifest m = synthetic_manifest(sizes);
    FoldAssignment f1 = stratified_folds(m, 5, 11);

    DatasetManifest shuffled = m;
    Rng rng(999);
    rng.shuffle(shuffled.entries);
    FoldAssignment f2 = stratified_folds(shuffled, 5, 11);
    CHECK(f1.fold_of == f2.fold_of);

    FoldAssignment f3 = stratified_folds(m, 5, 12);
    CHECK(f1.fold_of != f3.fold_of);  // seed matters
}

TEST_CASE("stratified_folds: partition and stratification properties") {
    std::map<std::string, int> sizes = {{"a", 23}, {"b", 9}, {"c", 14}, {"d", 3}};
    DatasetManifest m = synthetic_manifest(sizes);
    FoldAssignment f = stratified_folds(m, 5, 21);

    // partition: every id assigned exactly once
    CHECK(f.fold_of.size() == m.entries.size());
    for (const auto& e : m.entries) CHECK(f.fold_of.count(e.image_id) == 1);

    // stratification: per class, fold sizes differ by at most 1
    std::map<std::string, std::map<int, int>> per_class;
    for (const auto& e : m.entries) per_class[e.unified_label][f.fold_of.at(e.image_id)]++;
    for (const auto& [cls, folds] : per_class) {
        int mn = 1 << 30, mx = 0;
        for (int i = 0; i < 5; ++i) {
            const int v = folds.count(i) ? folds.at(i) : 0;
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        CHECK(mx - mn <= 1);
    }

    // class "d" has 3 < k members -> warning, still partitioned
    bool warned = false;
    for (const auto& w : f.warnings) warned |= w.find("'d'") != std::string::npos;
    CHECK(warned);

    CHECK_THROWS_AS(stratified_folds(m, 1, 0), std::invalid_argument);
}

TEST_CASE("manifest and folds round-trip through their file formats") {
    TmpDir tmp("io");
    DatasetManifest m = synthetic_manifest({{"a", 4}, {"b", 2}});
    m.source_root = "/data/x";
    m.created_with_mapping_hash = "abc123";
    const auto mp = (tmp.path / "manifest.jsonl").string();
    save_manifest(m, mp);

    DatasetManifest back = load_manifest(mp);
    REQUIRE(back.entries.size() == m.entries.size());
    CHECK(back.source_root == "/data/x");
    CHECK(back.created_with_mapping_hash == "abc123");
    for (size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(back.entries[i].image_id == m.entries[i].image_id);
        CHECK(back.entries[i].unified_label == m.entries[i].unified_label);
    }

    // manifest lines contain exactly the five contract fields
    std::ifstream in(mp);
    std::string line;
    std::getline(in, line);
    CHECK(line.find("image_id") != std::string::npos);
    CHECK(line.find("source_root") == std::string::npos);

    FoldAssignment f = stratified_folds(m, 3, 5);
    const auto fp = (tmp.path / "folds.json").string();
    save_folds(f, fp);
    FoldAssignment fback = load_folds(fp);
    CHECK(fback.k == 3);
    CHECK(fback.seed == 5);
    CHECK(fback.fold_of == f.fold_of);
}
