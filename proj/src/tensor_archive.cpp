#include "bcsam/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace bcsam {

namespace {
constexpr char kMagic[8] = {'B', 'C', 'S', 'A', 'M', 'A', 'R', '1'};
}

void TensorArchive::add(const std::string& name, const Tensor& t) {
    if (has(name)) throw std::invalid_argument("archive: duplicate tensor name " + name);
    entries_.push_back({name, t.shape(), t});
}

bool TensorArchive::has(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

const Tensor& TensorArchive::get(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e.data;
    throw std::runtime_error("archive: missing tensor " + name);
}

void TensorArchive::save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["meta"] = meta;
    nlohmann::json list = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& e : entries_) {
        const uint64_t nbytes = static_cast<uint64_t>(e.data.numel()) * sizeof(float);
        list.push_back({{"name", e.name},
                        {"shape", e.shape},
                        {"dtype", "f32"},
                        {"offset", offset},
                        {"nbytes", nbytes}});
        offset += nbytes;
    }
    manifest["tensors"] = list;
    const std::string mstr = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("archive: cannot open for write: " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    std::vector<float> buf;
    for (const auto& e : entries_) {
        buf.resize(static_cast<size_t>(e.data.numel()));
        for (int64_t i = 0; i < e.data.numel(); ++i)
            buf[static_cast<size_t>(i)] = static_cast<float>(e.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("archive: write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("archive: cannot open: " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("archive: bad magic in " + path);

    uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in) throw std::runtime_error("archive: truncated header in " + path);
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    if (!in) throw std::runtime_error("archive: truncated manifest in " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mstr);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("archive: corrupt manifest in " + path + ": " + e.what());
    }

    TensorArchive ar;
    ar.meta = manifest.value("meta", nlohmann::json::object());
    uint64_t expect_offset = 0;
    for (const auto& item : manifest.at("tensors")) {
        Entry e;
        e.name = item.at("name").get<std::string>();
        e.shape = item.at("shape").get<Shape>();
        const auto offset = item.at("offset").get<uint64_t>();
        const auto nbytes = item.at("nbytes").get<uint64_t>();
        const uint64_t want = static_cast<uint64_t>(shape_numel(e.shape)) * sizeof(float);
        if (item.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("archive: unsupported dtype for " + e.name);
        if (nbytes != want || offset != expect_offset)
            throw std::runtime_error("archive: manifest/blob layout mismatch for " + e.name);
        expect_offset += nbytes;

        e.data = Tensor(e.shape);
        std::vector<float> buf(static_cast<size_t>(shape_numel(e.shape)));
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error("archive: truncated blob at tensor " + e.name);
        for (size_t i = 0; i < buf.size(); ++i) e.data.data()[i] = static_cast<double>(buf[i]);
        ar.entries_.push_back(std::move(e));
    }
    // anything left over means the manifest does not describe the blob
    in.peek();
    if (!in.eof()) throw std::runtime_error("archive: trailing bytes in " + path);
    return ar;
}

}  // namespace bcsam
