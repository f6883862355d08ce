#pragma once

#include <cmath>
#include <stdexcept>

#include "neuroaps/core_types.hpp"
#include "neuroaps/mask_ops.hpp"

// Desk-scale preprocessing for slices that arrive without masks: per-slice
// min-max intensity normalization and threshold-plus-morphology brain masking.

namespace neuroaps {

struct NoBrainFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per-slice min-max normalization into [0, 1]. A constant image maps to all
/// zeros. Non-finite pixels are rejected.
inline SliceImage intensity_normalize(const SliceImage& raw) {
    if (raw.pixels.empty()) throw std::invalid_argument("intensity_normalize: empty image");
    float lo = raw.pixels[0], hi = raw.pixels[0];
    for (float v : raw.pixels) {
        if (!std::isfinite(v))
            throw std::invalid_argument("intensity_normalize: non-finite pixel value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    SliceImage out(raw.width, raw.height);
    if (hi > lo) {
        const float scale = 1.0f / (hi - lo);
        for (std::size_t i = 0; i < raw.pixels.size(); ++i)
            out.pixels[i] = (raw.pixels[i] - lo) * scale;
    }
    return out;
}

/// Brain extraction stand-in: threshold at `threshold`, close with a disk of
/// `closing_radius`, keep the largest 4-connected component. Throws
/// NoBrainFoundError when nothing survives the threshold.
inline Mask compute_brain_mask(const SliceImage& slice, double threshold = 0.1,
                               int closing_radius = 2) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("compute_brain_mask: threshold must lie in (0, 1)");
    if (closing_radius < 0)
        throw std::invalid_argument("compute_brain_mask: closing_radius must be >= 0");

    Mask fg(slice.width, slice.height);
    bool any = false;
    for (int y = 0; y < slice.height; ++y)
        for (int x = 0; x < slice.width; ++x) {
            const bool v = slice.at(x, y) >= static_cast<float>(threshold);
            fg.set(x, y, v);
            any = any || v;
        }
    if (!any) throw NoBrainFoundError("compute_brain_mask: empty foreground");
    return largest_component(morphological_close(fg, closing_radius));
}

}  // namespace neuroaps
