#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroaps/core_types.hpp"
#include "neuroaps/mask_ops.hpp"
#include "neuroaps/rng.hpp"

// Anatomical priority sampling plus the four ablation samplers. All samplers
// return exactly total_n points, never place a point outside the brain mask,
// and are fully deterministic per seed.

namespace neuroaps {

struct SamplingBudget {
    // Fractions in RegionLabel order: hippocampus, ventricles, surface, interior.
    std::array<double, kRegionCount> ratios{0.25, 0.25, 0.30, 0.20};
    int total_n = 8192;

    void validate() const {
        double sum = 0.0;
        for (double r : ratios) {
            if (r < 0.0) throw std::invalid_argument("budget: ratios must be >= 0");
            sum += r;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("budget: ratios must sum to 1");
        if (total_n < 1) throw std::invalid_argument("budget: total_n must be >= 1");
    }
};

inline constexpr std::array<int, 3> kDefaultPointCounts{2048, 4096, 8192};

enum class SamplerKind : std::uint8_t {
    APS = 0,
    UniformROI = 1,
    UniformNoROI = 2,
    RandomROI = 3,
    RandomNoROI = 4,
};

inline constexpr std::array<SamplerKind, 5> kAllSamplerKinds{
    SamplerKind::APS, SamplerKind::UniformROI, SamplerKind::UniformNoROI,
    SamplerKind::RandomROI, SamplerKind::RandomNoROI};

inline const char* sampler_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::APS: return "aps";
        case SamplerKind::UniformROI: return "uniform-roi";
        case SamplerKind::UniformNoROI: return "uniform";
        case SamplerKind::RandomROI: return "random-roi";
        case SamplerKind::RandomNoROI: return "random";
    }
    return "?";
}

inline SamplerKind parse_sampler(const std::string& s) {
    for (SamplerKind k : kAllSamplerKinds)
        if (s == sampler_name(k)) return k;
    throw std::invalid_argument("unknown sampler '" + s +
                                "' (expected aps|uniform-roi|uniform|random-roi|random)");
}

// ---------------------------------------------------------------------------
// Budget allocation
// ---------------------------------------------------------------------------

/// Converts ratios into integer per-region counts summing exactly to total_n.
/// Regions with zero available pixels get 0; their quota is redistributed
/// proportionally over the remaining regions. Integerization is
/// floor-plus-largest-remainder, remainder ties broken by region index.
inline std::array<int, kRegionCount> allocate_budget(
    const SamplingBudget& budget, const std::array<std::int64_t, kRegionCount>& availability) {
    budget.validate();

    std::array<bool, kRegionCount> active{};
    double active_ratio = 0.0;
    std::int64_t total_avail = 0;
    for (int r = 0; r < kRegionCount; ++r) {
        active[r] = availability[r] > 0;
        if (active[r]) active_ratio += budget.ratios[r];
        total_avail += std::max<std::int64_t>(availability[r], 0);
    }
    if (total_avail < 1) throw std::invalid_argument("allocate_budget: all regions empty");

    std::array<int, kRegionCount> counts{};
    std::array<double, kRegionCount> remainder{};
    int assigned = 0;
    for (int r = 0; r < kRegionCount; ++r) {
        if (!active[r] || active_ratio <= 0.0) continue;
        const double raw = budget.ratios[r] / active_ratio * budget.total_n;
        counts[r] = static_cast<int>(std::floor(raw));
        remainder[r] = raw - counts[r];
        assigned += counts[r];
    }
    // If every active ratio is zero (possible when only zero-ratio regions
    // have pixels), spread evenly over active regions instead.
    if (active_ratio <= 0.0) {
        int n_active = 0;
        for (bool a : active) n_active += a;
        int each = budget.total_n / n_active, extra = budget.total_n % n_active;
        for (int r = 0; r < kRegionCount; ++r)
            if (active[r]) counts[r] = each + (extra-- > 0 ? 1 : 0);
        return counts;
    }

    std::array<int, kRegionCount> order{0, 1, 2, 3};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        return a < b;
    });
    int left = budget.total_n - assigned;
    for (int i = 0; left > 0; ++i) {
        const int r = order[i % kRegionCount];
        if (active[r]) {
            ++counts[r];
            --left;
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// Boundary extraction and staged region sampling
// ---------------------------------------------------------------------------

/// Mask pixels with at least one 4-neighbor outside the mask, row-major.
inline std::vector<PixelCoord> extract_boundary(const Mask& mask) {
    if (mask.empty()) throw std::invalid_argument("extract_boundary: empty mask");
    return boundary_pixels(mask);
}

/// Draws `count` pixels from `candidates`. Without replacement while the
/// candidates last (a full Fisher-Yates permutation, truncated); any shortfall
/// is filled by uniform draws with replacement so undersized regions still
/// meet their quota.
inline std::vector<PixelCoord> sample_region(std::span<const PixelCoord> candidates, int count,
                                             Rng& rng) {
    if (count < 0) throw std::invalid_argument("sample_region: count must be >= 0");
    if (count == 0) return {};
    if (candidates.empty())
        throw std::invalid_argument("sample_region: no candidates for a positive quota");

    std::vector<PixelCoord> pool(candidates.begin(), candidates.end());
    rng.shuffle(pool);
    std::vector<PixelCoord> out;
    out.reserve(count);
    const int base = std::min<int>(count, static_cast<int>(pool.size()));
    out.insert(out.end(), pool.begin(), pool.begin() + base);
    for (int i = base; i < count; ++i)
        out.push_back(pool[static_cast<std::size_t>(rng.uniform_index(pool.size()))]);
    return out;
}

// ---------------------------------------------------------------------------
// APS
// ---------------------------------------------------------------------------

namespace detail {

inline LabeledPoint make_point(const SliceImage& slice, PixelCoord p, RegionLabel region) {
    LabeledPoint out;
    out.x = static_cast<float>(normalize_coord(p.x, slice.width));
    out.y = static_cast<float>(normalize_coord(p.y, slice.height));
    out.intensity = std::clamp(slice.at(p.x, p.y), 0.0f, 1.0f);
    out.region = region;
    return out;
}

inline void verify_hard_clip(const std::vector<PixelCoord>& pixels, const Mask& brain) {
    for (const auto& p : pixels)
        if (!brain.at(p.x, p.y))
            throw std::logic_error("sampler: point escaped the brain mask");
}

}  // namespace detail

/// Per-region candidate pixel sets for APS. Ventricle candidates include the
/// one-pixel outer ring of the ventricle mask (clipped to the brain mask) so
/// ventricular boundaries are sampled alongside the mask itself.
inline std::array<std::vector<PixelCoord>, kRegionCount> aps_candidates(
    const RegionMasks& masks) {
    std::array<std::vector<PixelCoord>, kRegionCount> cand;
    cand[static_cast<int>(RegionLabel::Hippocampus)] =
        mask_pixels(masks.of(RegionLabel::Hippocampus));
    const Mask& vent = masks.of(RegionLabel::Ventricles);
    cand[static_cast<int>(RegionLabel::Ventricles)] =
        mask_pixels(mask_or(vent, mask_and(outer_ring(vent), masks.brain)));
    cand[static_cast<int>(RegionLabel::Surface)] = mask_pixels(masks.of(RegionLabel::Surface));
    cand[static_cast<int>(RegionLabel::Interior)] = mask_pixels(masks.of(RegionLabel::Interior));
    return cand;
}

/// Staged anatomical priority sampling: allocate the budget over the four
/// regions, sample each region from its candidate set, label every point by
/// the region whose quota it fills, and hard-verify the brain-mask clip.
inline PointCloud aps_sample(const SliceImage& slice, const RegionMasks& masks,
                             const SamplingBudget& budget, std::uint64_t seed) {
    if (masks.brain.width != slice.width || masks.brain.height != slice.height)
        throw std::invalid_argument("aps_sample: mask shape does not match slice");

    const auto candidates = aps_candidates(masks);
    std::array<std::int64_t, kRegionCount> availability{};
    for (int r = 0; r < kRegionCount; ++r)
        availability[r] = static_cast<std::int64_t>(candidates[r].size());
    const auto counts = allocate_budget(budget, availability);

    PointCloud cloud;
    cloud.points.reserve(budget.total_n);
    for (int r = 0; r < kRegionCount; ++r) {
        if (counts[r] == 0) continue;
        Rng rng(derive_seed(seed, tag_hash("aps-region"), static_cast<std::uint64_t>(r)));
        const auto pixels = sample_region(candidates[r], counts[r], rng);
        detail::verify_hard_clip(pixels, masks.brain);
        for (const auto& p : pixels)
            cloud.points.push_back(detail::make_point(slice, p, static_cast<RegionLabel>(r)));
    }
    return cloud;
}

/// APS per-region counts for a given mask set, exposed so callers can assert
/// the budget property without re-deriving candidate sets.
inline std::array<int, kRegionCount> aps_allocation(const RegionMasks& masks,
                                                    const SamplingBudget& budget) {
    const auto candidates = aps_candidates(masks);
    std::array<std::int64_t, kRegionCount> availability{};
    for (int r = 0; r < kRegionCount; ++r)
        availability[r] = static_cast<std::int64_t>(candidates[r].size());
    return allocate_budget(budget, availability);
}

// ---------------------------------------------------------------------------
// Ablation samplers
// ---------------------------------------------------------------------------

namespace detail {

inline RegionLabel label_for_pixel(const RegionMasks& masks, PixelCoord p) {
    if (masks.of(RegionLabel::Hippocampus).at(p.x, p.y)) return RegionLabel::Hippocampus;
    if (masks.of(RegionLabel::Ventricles).at(p.x, p.y)) return RegionLabel::Ventricles;
    if (masks.of(RegionLabel::Surface).at(p.x, p.y)) return RegionLabel::Surface;
    return RegionLabel::Interior;
}

/// Regular grid over the brain mask: the largest integer stride whose grid
/// still holds >= total_n pixels, truncated to the first total_n in row-major
/// order. If even stride 1 falls short the grid wraps around deterministically.
inline std::vector<PixelCoord> uniform_grid_pixels(const Mask& brain, int total_n) {
    const auto all = mask_pixels(brain);
    if (all.empty()) throw std::invalid_argument("uniform sampler: empty brain mask");

    auto grid_of = [&](int stride) {
        std::vector<PixelCoord> g;
        for (const auto& p : all)
            if (p.x % stride == 0 && p.y % stride == 0) g.push_back(p);
        return g;
    };
    int best = 1;
    for (int stride = 2; stride <= std::max(brain.width, brain.height); ++stride) {
        if (static_cast<int>(grid_of(stride).size()) >= total_n)
            best = stride;
        else
            break;
    }
    std::vector<PixelCoord> grid = grid_of(best);
    std::vector<PixelCoord> out;
    out.reserve(total_n);
    for (int i = 0; i < total_n; ++i) out.push_back(grid[i % grid.size()]);
    return out;
}

}  // namespace detail

/// The five Table-style sampling variants. ROI kinds label each point by the
/// mask containing it (hippocampus > ventricles > surface > interior); NoROI
/// kinds assign a constant Interior label, collapsing ROI tokenisation to a
/// single populated group.
inline PointCloud ablation_sample(SamplerKind kind, const SliceImage& slice,
                                  const RegionMasks& masks, int total_n, std::uint64_t seed) {
    if (kind == SamplerKind::APS) {
        SamplingBudget budget;
        budget.total_n = total_n;
        return aps_sample(slice, masks, budget, seed);
    }
    if (masks.brain.width != slice.width || masks.brain.height != slice.height)
        throw std::invalid_argument("ablation_sample: mask shape does not match slice");
    if (total_n < 1) throw std::invalid_argument("ablation_sample: total_n must be >= 1");

    std::vector<PixelCoord> pixels;
    if (kind == SamplerKind::UniformROI || kind == SamplerKind::UniformNoROI) {
        pixels = detail::uniform_grid_pixels(masks.brain, total_n);
    } else {
        const auto all = mask_pixels(masks.brain);
        if (all.empty()) throw std::invalid_argument("random sampler: empty brain mask");
        Rng rng(derive_seed(seed, tag_hash("random-sampler")));
        pixels.reserve(total_n);
        for (int i = 0; i < total_n; ++i)
            pixels.push_back(all[static_cast<std::size_t>(rng.uniform_index(all.size()))]);
    }
    detail::verify_hard_clip(pixels, masks.brain);

    const bool roi_aware = kind == SamplerKind::UniformROI || kind == SamplerKind::RandomROI;
    PointCloud cloud;
    cloud.points.reserve(total_n);
    for (const auto& p : pixels) {
        const RegionLabel label =
            roi_aware ? detail::label_for_pixel(masks, p) : RegionLabel::Interior;
        cloud.points.push_back(detail::make_point(slice, p, label));
    }
    return cloud;
}

}  // namespace neuroaps
