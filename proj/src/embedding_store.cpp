#include "bcsam/embedding_store.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "bcsam/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace bcsam {

namespace {

std::string blob_name(const std::string& image_id) {
    std::string safe;
    for (char c : image_id)
        safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    if (safe.size() > 80) safe = safe.substr(safe.size() - 80);
    return safe + "_" + fnv1a64_hex(image_id).substr(8) + ".f32";
}

}  // namespace

EmbeddingStore EmbeddingStore::open(const std::string& dir) {
    EmbeddingStore s;
    s.dir_ = dir;
    fs::create_directories(fs::path(dir) / "blobs");
    const fs::path index = fs::path(dir) / "index.json";
    if (fs::exists(index)) {
        std::ifstream in(index);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw std::runtime_error("store index parse error in " + index.string() + ": " + e.what());
        }
        s.meta_ = j.value("meta", json::object());
        for (const auto& [id, item] : j.at("entries").items()) {
            StoreEntry e;
            e.image_id = id;
            e.domain = domain_from_string(item.at("domain").get<std::string>());
            e.label = item.at("label").get<std::string>();
            e.emb_shape = item.at("emb_shape").get<Shape>();
            e.tgt_shape = item.at("tgt_shape").get<Shape>();
            e.file = item.at("file").get<std::string>();
            e.tgt_offset = item.at("tgt_offset").get<int64_t>();
            e.mask_empty = item.value("mask_empty", false);
            s.entries_[id] = std::move(e);
        }
    }
    return s;
}

const StoreEntry& EmbeddingStore::entry(const std::string& image_id) const {
    auto it = entries_.find(image_id);
    if (it == entries_.end())
        throw std::runtime_error("store is missing embedding for id: " + image_id);
    return it->second;
}

std::vector<std::string> EmbeddingStore::ids() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;  // std::map keeps them sorted
}

std::vector<std::string> EmbeddingStore::ids_for_domain(DomainId d) const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_)
        if (e.domain == d) out.push_back(id);
    return out;
}

bool EmbeddingStore::has_domain(DomainId d) const {
    for (const auto& [id, e] : entries_)
        if (e.domain == d) return true;
    return false;
}

void EmbeddingStore::put(const std::string& image_id, DomainId domain, const std::string& label,
                         const Tensor& embedding, const Tensor& target, bool mask_empty) {
    if (contains(image_id)) return;  // idempotent

    StoreEntry e;
    e.image_id = image_id;
    e.domain = domain;
    e.label = label;
    e.emb_shape = embedding.shape();
    e.tgt_shape = target.shape();
    e.file = "blobs/" + blob_name(image_id);
    e.tgt_offset = embedding.numel();
    e.mask_empty = mask_empty;

    const fs::path blob = fs::path(dir_) / e.file;
    {
        std::ofstream out(blob, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write blob: " + blob.string());
        std::vector<float> buf(static_cast<size_t>(embedding.numel() + target.numel()));
        for (int64_t i = 0; i < embedding.numel(); ++i)
            buf[static_cast<size_t>(i)] = static_cast<float>(embedding[i]);
        for (int64_t i = 0; i < target.numel(); ++i)
            buf[static_cast<size_t>(embedding.numel() + i)] = static_cast<float>(target[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) throw std::runtime_error("blob write failed: " + blob.string());
    }
    entries_[image_id] = std::move(e);
    write_index();  // after the blob: a crash can only lose unindexed blobs
}

Tensor EmbeddingStore::read_blob(const StoreEntry& e, int64_t float_offset,
                                 const Shape& shape) const {
    const fs::path blob = fs::path(dir_) / e.file;
    std::ifstream in(blob, std::ios::binary);
    if (!in) throw std::runtime_error("missing blob for id " + e.image_id + ": " + blob.string());
    in.seekg(float_offset * static_cast<int64_t>(sizeof(float)));
    std::vector<float> buf(static_cast<size_t>(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated blob for id " + e.image_id);
    Tensor t(shape);
    for (size_t i = 0; i < buf.size(); ++i) t.data()[i] = static_cast<double>(buf[i]);
    return t;
}

Tensor EmbeddingStore::load_embedding(const std::string& image_id) const {
    const StoreEntry& e = entry(image_id);
    return read_blob(e, 0, e.emb_shape);
}

Tensor EmbeddingStore::load_target(const std::string& image_id) const {
    const StoreEntry& e = entry(image_id);
    return read_blob(e, e.tgt_offset, e.tgt_shape);
}

void EmbeddingStore::write_index() const {
    json entries = json::object();
    for (const auto& [id, e] : entries_) {
        entries[id] = {{"domain", to_string(e.domain)}, {"label", e.label},
                       {"emb_shape", e.emb_shape},     {"tgt_shape", e.tgt_shape},
                       {"file", e.file},               {"tgt_offset", e.tgt_offset},
                       {"mask_empty", e.mask_empty}};
    }
    json j = {{"meta", meta_}, {"entries", entries}};
    const fs::path index = fs::path(dir_) / "index.json";
    const fs::path tmp = fs::path(dir_) / "index.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write store index: " + tmp.string());
        out << j.dump(1) << "\n";
    }
    fs::rename(tmp, index);
}

}  // namespace bcsam
