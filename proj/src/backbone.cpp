#include "bcsam/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "bcsam/rng.hpp"
#include "bcsam/tensor_archive.hpp"

namespace bcsam {

BackboneSpec BackboneSpec::vit_b() {
    return {"vit_b", 1024, 16, 768, 12, 12, 4, 256};
}

BackboneSpec BackboneSpec::vit_tiny() {
    return {"vit_tiny", 256, 16, 64, 2, 2, 4, 32};
}

BackboneSpec BackboneSpec::by_name(const std::string& name) {
    if (name == "vit_b") return vit_b();
    if (name == "vit_tiny") return vit_tiny();
    throw std::invalid_argument("unknown backbone variant '" + name +
                                "' (expected vit_b or vit_tiny)");
}

std::vector<std::string> backbone_tensor_names(const BackboneSpec& spec) {
    std::vector<std::string> names = {"patch_embed.w", "patch_embed.b", "pos_embed"};
    for (int i = 0; i < spec.depth; ++i) {
        const std::string b = "blocks." + std::to_string(i) + ".";
        for (const char* p : {"ln1.gamma", "ln1.beta", "attn.q.w", "attn.q.b", "attn.k.w",
                              "attn.k.b", "attn.v.w", "attn.v.b", "attn.proj.w", "attn.proj.b",
                              "ln2.gamma", "ln2.beta", "mlp.fc1.w", "mlp.fc1.b", "mlp.fc2.w",
                              "mlp.fc2.b"})
            names.push_back(b + p);
    }
    names.push_back("neck.w");
    names.push_back("neck.b");
    return names;
}

namespace {

Shape tensor_shape_for(const BackboneSpec& s, const std::string& name) {
    const int w = s.width;
    if (name == "patch_embed.w") return {w, 3, s.patch, s.patch};
    if (name == "patch_embed.b") return {w};
    if (name == "pos_embed") return {s.token_count(), w};
    if (name == "neck.w") return {s.emb_channels, w, 1, 1};
    if (name == "neck.b") return {s.emb_channels};
    // block tensors
    const auto suffix = name.substr(name.find('.', 7) + 1);  // after "blocks.<i>."
    if (suffix == "ln1.gamma" || suffix == "ln1.beta" || suffix == "ln2.gamma" ||
        suffix == "ln2.beta")
        return {w};
    if (suffix == "attn.q.w" || suffix == "attn.k.w" || suffix == "attn.v.w" ||
        suffix == "attn.proj.w")
        return {w, w};
    if (suffix == "attn.q.b" || suffix == "attn.k.b" || suffix == "attn.v.b" ||
        suffix == "attn.proj.b")
        return {w};
    if (suffix == "mlp.fc1.w") return {w * s.mlp_ratio, w};
    if (suffix == "mlp.fc1.b") return {w * s.mlp_ratio};
    if (suffix == "mlp.fc2.w") return {w, w * s.mlp_ratio};
    if (suffix == "mlp.fc2.b") return {w};
    throw std::logic_error("unknown backbone tensor: " + name);
}

}  // namespace

const Tensor& BackboneWeights::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw std::runtime_error("backbone weights missing tensor: " + name);
    return it->second;
}

uint64_t BackboneWeights::checksum() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : tensors) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(double), h);
    }
    return h;
}

BackboneWeights BackboneWeights::random_init(const BackboneSpec& spec, uint64_t seed) {
    BackboneWeights w;
    w.spec = spec;
    Rng rng(seed);
    for (const auto& name : backbone_tensor_names(spec)) {
        const Shape shape = tensor_shape_for(spec, name);
        Tensor t(shape);
        const bool is_gamma = name.find("gamma") != std::string::npos;
        const bool is_bias = !is_gamma && (name.back() == 'b' || name.find("beta") != std::string::npos ||
                                           name == "pos_embed");
        if (is_gamma) {
            t.fill(1.0);
        } else if (name == "pos_embed") {
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 0.02 * rng.normal();
        } else if (is_bias) {
            // zeros
        } else {
            int64_t fan_in = shape.back();
            if (shape.size() == 4) fan_in = shape[1] * shape[2] * shape[3];
            const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = stddev * rng.normal();
        }
        w.tensors[name] = std::move(t);
    }
    return w;
}

void BackboneWeights::save(const std::string& path) const {
    TensorArchive ar;
    ar.meta = {{"kind", "backbone_weights"},
               {"variant", spec.name},
               {"img_size", spec.img_size},
               {"patch", spec.patch},
               {"width", spec.width},
               {"depth", spec.depth},
               {"heads", spec.heads},
               {"mlp_ratio", spec.mlp_ratio},
               {"emb_channels", spec.emb_channels}};
    for (const auto& [name, t] : tensors) ar.add(name, t);
    ar.save(path);
}

BackboneWeights BackboneWeights::load(const std::string& path) {
    TensorArchive ar = TensorArchive::load(path);
    if (ar.meta.value("kind", "") != "backbone_weights")
        throw std::runtime_error("not a backbone weights file: " + path);
    BackboneWeights w;
    w.spec.name = ar.meta.at("variant").get<std::string>();
    w.spec.img_size = ar.meta.at("img_size").get<int>();
    w.spec.patch = ar.meta.at("patch").get<int>();
    w.spec.width = ar.meta.at("width").get<int>();
    w.spec.depth = ar.meta.at("depth").get<int>();
    w.spec.heads = ar.meta.at("heads").get<int>();
    w.spec.mlp_ratio = ar.meta.at("mlp_ratio").get<int>();
    w.spec.emb_channels = ar.meta.at("emb_channels").get<int>();
    for (const auto& name : backbone_tensor_names(w.spec)) {
        if (!ar.has(name))
            throw std::runtime_error("backbone weights file " + path + " is missing " + name);
        Tensor t = ar.get(name);
        if (t.shape() != tensor_shape_for(w.spec, name))
            throw std::runtime_error("backbone tensor " + name + " has shape " +
                                     shape_str(t.shape()) + ", expected " +
                                     shape_str(tensor_shape_for(w.spec, name)));
        w.tensors[name] = std::move(t);
    }
    return w;
}

}  // namespace bcsam
