#pragma once

// On-disk cache of (embedding, post-processed target) pairs, one float32 blob
// per image plus an index.json. Writes are crash-safe: the blob lands first,
// then the index is atomically replaced, so every indexed entry always has a
// complete blob behind it.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcsam/dataset.hpp"
#include "bcsam/tensor.hpp"

namespace bcsam {

struct StoreEntry {
    std::string image_id;
    DomainId domain = DomainId::matek19;
    std::string label;
    Shape emb_shape;
    Shape tgt_shape;
    std::string file;        // blob filename, relative to the store directory
    int64_t tgt_offset = 0;  // float offset of the target within the blob
    bool mask_empty = false; // post-processing fell back to the whole image
};

class EmbeddingStore {
public:
    // Opens an existing store or starts an empty one in `dir`.
    static EmbeddingStore open(const std::string& dir);

    const std::string& dir() const { return dir_; }
    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    bool contains(const std::string& image_id) const { return entries_.count(image_id) > 0; }
    size_t size() const { return entries_.size(); }
    const StoreEntry& entry(const std::string& image_id) const;

    std::vector<std::string> ids() const;  // sorted
    std::vector<std::string> ids_for_domain(DomainId d) const;
    bool has_domain(DomainId d) const;

    // Persists one pair; no-op if the id is already present.
    void put(const std::string& image_id, DomainId domain, const std::string& label,
             const Tensor& embedding, const Tensor& target, bool mask_empty);

    Tensor load_embedding(const std::string& image_id) const;
    Tensor load_target(const std::string& image_id) const;

    void write_index() const;

private:
    std::string dir_;
    nlohmann::json meta_ = nlohmann::json::object();
    std::map<std::string, StoreEntry> entries_;

    Tensor read_blob(const StoreEntry& e, int64_t float_offset, const Shape& shape) const;
};

}  // namespace bcsam
