#pragma once

// Dataset discovery, label unification, image loading and fold assignment.
// The two corpora carry different raw label vocabularies; a versioned label
// map config folds both into the shared 13-class space, and every manifest
// records a hash of the map it was built with.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bcsam/image.hpp"

namespace bcsam {

inline constexpr int kUnifiedClassCount = 13;
inline constexpr int kCellImageSize = 224;

enum class DomainId { matek19, acevedo20 };

const char* to_string(DomainId d);
DomainId domain_from_string(const std::string& s);  // throws on unknown

struct LabelMap {
    // domain -> raw label -> unified class
    std::map<std::string, std::map<std::string, std::string>> rules;
    // optional provenance note per "domain/raw_label" rule
    std::map<std::string, std::string> notes;

    // image of the map over all domains, sorted
    std::vector<std::string> unified_classes() const;
    size_t raw_label_count() const;

    // enforces exactly `expect_classes` unified classes and >= that many raws
    void validate(int expect_classes = kUnifiedClassCount) const;

    // stable content hash over the rules (notes excluded)
    std::string content_hash() const;
};

LabelMap load_label_map(const std::string& path, bool strict = true);
void save_label_map(const LabelMap& map, const std::string& path);

struct ManifestEntry {
    std::string image_id;
    std::string path;
    DomainId domain = DomainId::matek19;
    std::string raw_label;
    std::string unified_label;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string source_root;
    std::string created_with_mapping_hash;
};

// Walks <root>/<raw_label>/<image files>. Unknown labels and empty roots are
// hard errors; unreadable extensions are skipped.
DatasetManifest scan_dataset(const std::string& root, DomainId domain, const LabelMap& map);

struct CellImage {
    ImageF image;  // 3 x 224 x 224, values in [0,1]
    DomainId domain = DomainId::matek19;
    std::string unified_label;
    std::string image_id;
};

// Decodes, converts to RGB [0,1] and bilinearly resizes to 224x224.
CellImage load_image(const ManifestEntry& entry);

struct FoldAssignment {
    int k = 5;
    uint64_t seed = 0;
    std::map<std::string, int> fold_of;
    std::vector<std::string> warnings;  // not serialized

    std::vector<std::string> ids_in_fold(int fold) const;
    std::vector<std::string> ids_outside_fold(int fold) const;
};

// Deterministic stratified folds: entries are canonically sorted by image_id
// before the seeded shuffle, so manifest order is irrelevant. Classes with
// fewer than k members are assigned round-robin and produce a warning.
FoldAssignment stratified_folds(const DatasetManifest& manifest, int k, uint64_t seed);

// External file formats (JSON-lines manifest + meta sidecar, JSON folds).
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
void save_folds(const FoldAssignment& f, const std::string& path);
FoldAssignment load_folds(const std::string& path);

}  // namespace bcsam
