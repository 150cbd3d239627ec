#pragma once

// Synthetic two-domain fixture: 13 shape classes drawn on domain-tinted
// backgrounds, with ground-truth masks. The foreground color distribution is
// shared across domains so only the background tint separates them; this is
// the desk-scale stand-in for the two real corpora. Raw labels mirror the
// real structure: 15 on the matek19 side (two merged pairs), 13 on the
// acevedo20 side.

#include <cstdint>
#include <string>

#include "bcsam/dataset.hpp"

namespace bcsam {

struct SynthConfig {
    int per_class = 8;  // images per unified class per domain
    uint64_t seed = 1;
    int image_size = 224;
    bool emit_masks = true;
};

// Writes <root>/<domain>/<raw_label>/*.png (plus <root>/masks/... when
// requested and <root>/label_map.json) and returns the label map.
LabelMap generate_synthetic_dataset(const std::string& root, const SynthConfig& cfg);

// Convenience for tests: one image + mask pair in memory.
std::pair<ImageF, MaskU8> synth_image(int shape_class, DomainId domain, uint64_t seed,
                                      int image_size = 224);

}  // namespace bcsam
