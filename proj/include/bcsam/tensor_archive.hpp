#pragma once

// Single-file checkpoint container: 8-byte magic, little-endian u64 manifest
// length, JSON manifest, then a raw float32 little-endian blob (row-major
// tensors back to back). Used for adapters, backbone weights, heads and the
// autoencoder. Saving the result of a load reproduces the file byte for byte.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcsam/tensor.hpp"

namespace bcsam {

class TensorArchive {
public:
    struct Entry {
        std::string name;
        Shape shape;
        Tensor data;  // double in memory; float32 on disk
    };

    nlohmann::json meta = nlohmann::json::object();

    void add(const std::string& name, const Tensor& t);
    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;  // throws if missing
    const std::vector<Entry>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);  // throws on corruption

private:
    std::vector<Entry> entries_;
};

}  // namespace bcsam
