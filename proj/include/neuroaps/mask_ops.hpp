#pragma once

#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "neuroaps/core_types.hpp"

// Grid morphology shared by the phantom generator, the preprocessing stage,
// and the samplers. All operations treat pixels outside the image as
// background.

namespace neuroaps {

/// Disk-shaped structuring element offsets for radius r (dx*dx + dy*dy <= r*r).
inline std::vector<PixelCoord> disk_offsets(int radius) {
    std::vector<PixelCoord> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) offs.push_back({dx, dy});
    return offs;
}

inline Mask dilate(const Mask& m, int radius) {
    if (radius <= 0) return m;
    const auto offs = disk_offsets(radius);
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            for (const auto& o : offs) {
                const int nx = x + o.x, ny = y + o.y;
                if (m.in_bounds(nx, ny)) out.set(nx, ny, true);
            }
        }
    return out;
}

inline Mask erode(const Mask& m, int radius) {
    if (radius <= 0) return m;
    const auto offs = disk_offsets(radius);
    Mask out(m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            bool keep = m.at(x, y);
            for (std::size_t i = 0; keep && i < offs.size(); ++i) {
                const int nx = x + offs[i].x, ny = y + offs[i].y;
                keep = m.in_bounds(nx, ny) && m.at(nx, ny);
            }
            out.set(x, y, keep);
        }
    return out;
}

inline Mask morphological_close(const Mask& m, int radius) {
    return erode(dilate(m, radius), radius);
}

/// Largest 4-connected foreground component. Ties break toward the component
/// whose first pixel comes earliest in row-major order (the scan order).
inline Mask largest_component(const Mask& m) {
    Mask out(m.width, m.height);
    std::vector<std::int32_t> label(m.data.size(), -1);
    std::int32_t best_label = -1;
    std::int64_t best_size = 0;
    std::int32_t next = 0;
    std::vector<std::int64_t> sizes;

    static constexpr int kDx[4] = {1, -1, 0, 0};
    static constexpr int kDy[4] = {0, 0, 1, -1};

    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const std::size_t idx = static_cast<std::size_t>(y) * m.width + x;
            if (!m.at(x, y) || label[idx] >= 0) continue;
            const std::int32_t cur = next++;
            std::int64_t size = 0;
            std::queue<PixelCoord> q;
            q.push({x, y});
            label[idx] = cur;
            while (!q.empty()) {
                const PixelCoord p = q.front();
                q.pop();
                ++size;
                for (int k = 0; k < 4; ++k) {
                    const int nx = p.x + kDx[k], ny = p.y + kDy[k];
                    if (!m.in_bounds(nx, ny) || !m.at(nx, ny)) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny) * m.width + nx;
                    if (label[nidx] >= 0) continue;
                    label[nidx] = cur;
                    q.push({nx, ny});
                }
            }
            sizes.push_back(size);
            if (size > best_size) {  // strict: earlier component wins ties
                best_size = size;
                best_label = cur;
            }
        }

    if (best_label < 0) return out;
    for (std::size_t i = 0; i < m.data.size(); ++i)
        if (label[i] == best_label) out.data[i] = 1;
    return out;
}

/// True iff all foreground pixels form one 4-connected component.
inline bool is_connected(const Mask& m) {
    const std::int64_t total = m.count();
    if (total == 0) return true;
    return largest_component(m).count() == total;
}

/// Mask pixels with at least one 4-neighbor outside the mask (image borders
/// count as outside). Row-major order.
inline std::vector<PixelCoord> boundary_pixels(const Mask& m) {
    std::vector<PixelCoord> out;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            const bool boundary = !m.in_bounds(x + 1, y) || !m.at(x + 1, y) ||
                                  !m.in_bounds(x - 1, y) || !m.at(x - 1, y) ||
                                  !m.in_bounds(x, y + 1) || !m.at(x, y + 1) ||
                                  !m.in_bounds(x, y - 1) || !m.at(x, y - 1);
            if (boundary) out.push_back({x, y});
        }
    return out;
}

/// One-pixel ring just outside the mask (4-neighborhood dilation minus mask).
inline Mask outer_ring(const Mask& m) {
    Mask out(m.width, m.height);
    static constexpr int kDx[4] = {1, -1, 0, 0};
    static constexpr int kDy[4] = {0, 0, 1, -1};
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(x, y)) continue;
            for (int k = 0; k < 4; ++k) {
                const int nx = x + kDx[k], ny = y + kDy[k];
                if (m.in_bounds(nx, ny) && !m.at(nx, ny)) out.set(nx, ny, true);
            }
        }
    return out;
}

inline std::vector<PixelCoord> mask_pixels(const Mask& m) {
    std::vector<PixelCoord> out;
    out.reserve(static_cast<std::size_t>(m.count()));
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) out.push_back({x, y});
    return out;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
    Mask out(a.width, a.height);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] && b.data[i];
    return out;
}

inline Mask mask_and_not(const Mask& a, const Mask& b) {
    Mask out(a.width, a.height);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] && !b.data[i];
    return out;
}

inline Mask mask_or(const Mask& a, const Mask& b) {
    Mask out(a.width, a.height);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] || b.data[i];
    return out;
}

inline bool is_subset(const Mask& sub, const Mask& super) {
    for (std::size_t i = 0; i < sub.data.size(); ++i)
        if (sub.data[i] && !super.data[i]) return false;
    return true;
}

inline bool is_disjoint(const Mask& a, const Mask& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] && b.data[i]) return false;
    return true;
}

}  // namespace neuroaps
