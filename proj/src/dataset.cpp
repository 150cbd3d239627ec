#include "bcsam/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "bcsam/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bcsam {

const char* to_string(DomainId d) {
    switch (d) {
        case DomainId::matek19: return "matek19";
        case DomainId::acevedo20: return "acevedo20";
    }
    return "?";
}

DomainId domain_from_string(const std::string& s) {
    if (s == "matek19") return DomainId::matek19;
    if (s == "acevedo20") return DomainId::acevedo20;
    throw std::invalid_argument("unknown domain '" + s + "' (expected matek19 or acevedo20)");
}

std::vector<std::string> LabelMap::unified_classes() const {
    std::set<std::string> classes;
    for (const auto& [domain, m] : rules)
        for (const auto& [raw, unified] : m) classes.insert(unified);
    return {classes.begin(), classes.end()};
}

size_t LabelMap::raw_label_count() const {
    std::set<std::string> raws;
    for (const auto& [domain, m] : rules)
        for (const auto& [raw, unified] : m) raws.insert(raw);
    return raws.size();
}

void LabelMap::validate(int expect_classes) const {
    const auto classes = unified_classes();
    if (static_cast<int>(classes.size()) != expect_classes)
        throw std::runtime_error("label map produces " + std::to_string(classes.size()) +
                                 " unified classes, expected " + std::to_string(expect_classes));
    if (raw_label_count() < static_cast<size_t>(expect_classes))
        throw std::runtime_error("label map has fewer raw labels than unified classes");
}

std::string LabelMap::content_hash() const {
    json j;
    for (const auto& [domain, m] : rules) j[domain] = m;
    return fnv1a64_hex(j.dump());
}

LabelMap load_label_map(const std::string& path, bool strict) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open label map: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("label map parse error in " + path + ": " + e.what());
    }
    LabelMap map;
    for (const auto& [key, value] : j.items()) {
        if (key == "_notes") {
            for (const auto& [rule, note] : value.items())
                map.notes[rule] = note.get<std::string>();
            continue;
        }
        for (const auto& [raw, unified] : value.items())
            map.rules[key][raw] = unified.get<std::string>();
    }
    if (strict) map.validate();
    return map;
}

void save_label_map(const LabelMap& map, const std::string& path) {
    json j;
    for (const auto& [domain, m] : map.rules) j[domain] = m;
    if (!map.notes.empty()) j["_notes"] = map.notes;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write label map: " + path);
    out << j.dump(2) << "\n";
}

namespace {

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
    return exts.count(ext) > 0;
}

}  // namespace

DatasetManifest scan_dataset(const std::string& root, DomainId domain, const LabelMap& map) {
    if (!fs::is_directory(root))
        throw std::runtime_error("dataset root does not exist: " + root);
    const std::string domain_name = to_string(domain);
    const auto rules_it = map.rules.find(domain_name);

    std::vector<std::string> labels;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) labels.push_back(e.path().filename().string());
    std::sort(labels.begin(), labels.end());

    DatasetManifest manifest;
    manifest.source_root = root;
    manifest.created_with_mapping_hash = map.content_hash();
    for (const auto& raw : labels) {
        if (rules_it == map.rules.end() || !rules_it->second.count(raw))
            throw std::runtime_error("raw label '" + raw + "' under domain " + domain_name +
                                     " is not in the label map");
        const std::string unified = rules_it->second.at(raw);
        std::vector<std::string> files;
        for (const auto& f : fs::directory_iterator(fs::path(root) / raw))
            if (f.is_regular_file() && has_image_extension(f.path()))
                files.push_back(f.path().filename().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            ManifestEntry e;
            e.image_id = domain_name + "/" + raw + "/" + f;
            e.path = (fs::path(root) / raw / f).string();
            e.domain = domain;
            e.raw_label = raw;
            e.unified_label = unified;
            manifest.entries.push_back(std::move(e));
        }
    }
    if (manifest.entries.empty())
        throw std::runtime_error("dataset root contains no images: " + root);
    return manifest;
}

CellImage load_image(const ManifestEntry& entry) {
    CellImage cell;
    try {
        cell.image = resize_bilinear(decode_image_rgb(entry.path), kCellImageSize, kCellImageSize);
    } catch (const std::exception& e) {
        throw std::runtime_error("load_image failed for " + entry.image_id + ": " + e.what());
    }
    cell.domain = entry.domain;
    cell.unified_label = entry.unified_label;
    cell.image_id = entry.image_id;
    return cell;
}

std::vector<std::string> FoldAssignment::ids_in_fold(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f == fold) out.push_back(id);
    return out;
}

std::vector<std::string> FoldAssignment::ids_outside_fold(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : fold_of)
        if (f != fold) out.push_back(id);
    return out;
}

FoldAssignment stratified_folds(const DatasetManifest& manifest, int k, uint64_t seed) {
    if (k < 2) throw std::invalid_argument("stratified_folds: k must be >= 2");
    if (manifest.entries.empty()) throw std::invalid_argument("stratified_folds: empty manifest");

    // canonical order: class -> sorted ids, classes iterated sorted
    std::map<std::string, std::vector<std::string>> by_class;
    for (const auto& e : manifest.entries) by_class[e.unified_label].push_back(e.image_id);

    FoldAssignment out;
    out.k = k;
    out.seed = seed;
    Rng rng(seed);
    int offset = 0;
    for (auto& [cls, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        if (ids.size() != std::set<std::string>(ids.begin(), ids.end()).size())
            throw std::runtime_error("duplicate image ids in class " + cls);
        rng.shuffle(ids);
        if (static_cast<int>(ids.size()) < k)
            out.warnings.push_back("class '" + cls + "' has only " + std::to_string(ids.size()) +
                                   " members for k=" + std::to_string(k) +
                                   "; assigned round-robin");
        for (size_t i = 0; i < ids.size(); ++i)
            out.fold_of[ids[i]] = static_cast<int>((i + static_cast<size_t>(offset)) % static_cast<size_t>(k));
        offset = (offset + static_cast<int>(ids.size() % static_cast<size_t>(k))) % k;
    }
    return out;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    for (const auto& e : m.entries) {
        json line = {{"image_id", e.image_id},
                     {"path", e.path},
                     {"domain", to_string(e.domain)},
                     {"raw_label", e.raw_label},
                     {"unified_label", e.unified_label}};
        out << line.dump() << "\n";
    }
    json meta = {{"source_root", m.source_root},
                 {"created_with_mapping_hash", m.created_with_mapping_hash}};
    std::ofstream mout(path + ".meta.json");
    mout << meta.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    DatasetManifest m;
    std::string line;
    size_t lineno = 0;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error("manifest parse error at " + path + ":" +
                                     std::to_string(lineno) + ": " + e.what());
        }
        ManifestEntry e;
        e.image_id = j.at("image_id").get<std::string>();
        e.path = j.at("path").get<std::string>();
        e.domain = domain_from_string(j.at("domain").get<std::string>());
        e.raw_label = j.at("raw_label").get<std::string>();
        e.unified_label = j.at("unified_label").get<std::string>();
        if (!seen.insert(e.image_id).second)
            throw std::runtime_error("duplicate image_id in manifest: " + e.image_id);
        m.entries.push_back(std::move(e));
    }
    std::ifstream min(path + ".meta.json");
    if (min) {
        json meta;
        min >> meta;
        m.source_root = meta.value("source_root", "");
        m.created_with_mapping_hash = meta.value("created_with_mapping_hash", "");
    }
    return m;
}

void save_folds(const FoldAssignment& f, const std::string& path) {
    json j = {{"k", f.k}, {"seed", f.seed}, {"fold_of", f.fold_of}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write folds: " + path);
    out << j.dump(2) << "\n";
}

FoldAssignment load_folds(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open folds: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("folds parse error in " + path + ": " + e.what());
    }
    FoldAssignment f;
    f.k = j.at("k").get<int>();
    f.seed = j.at("seed").get<uint64_t>();
    f.fold_of = j.at("fold_of").get<std::map<std::string, int>>();
    return f;
}

}  // namespace bcsam
