#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace neuroaps {

// ---------------------------------------------------------------------------
// Region and class labels
// ---------------------------------------------------------------------------

/// The four anatomical categories. Integer codes are stable: they are used in
/// the cloud file format and as the one-hot ordering in the model input.
enum class RegionLabel : std::uint8_t {
    Hippocampus = 0,
    Ventricles = 1,
    Surface = 2,
    Interior = 3,
};

inline constexpr int kRegionCount = 4;

inline constexpr std::array<RegionLabel, kRegionCount> kAllRegions{
    RegionLabel::Hippocampus, RegionLabel::Ventricles,
    RegionLabel::Surface, RegionLabel::Interior};

inline const char* region_name(RegionLabel r) {
    switch (r) {
        case RegionLabel::Hippocampus: return "hippocampus";
        case RegionLabel::Ventricles: return "ventricles";
        case RegionLabel::Surface: return "surface";
        case RegionLabel::Interior: return "interior";
    }
    return "?";
}

enum class ClassLabel : std::uint8_t { CN = 0, AD = 1 };

inline const char* class_name(ClassLabel c) { return c == ClassLabel::AD ? "AD" : "CN"; }

// ---------------------------------------------------------------------------
// Points and clouds
// ---------------------------------------------------------------------------

/// One sampled point: normalized coordinates in [-1, 1], normalized intensity
/// in [0, 1], and the anatomical region it was sampled for.
struct LabeledPoint {
    float x = 0.0f;
    float y = 0.0f;
    float intensity = 0.0f;
    RegionLabel region = RegionLabel::Interior;

    bool operator==(const LabeledPoint&) const = default;
};

struct PointCloud {
    std::vector<LabeledPoint> points;
    std::optional<ClassLabel> class_label;
    std::string source_id;

    std::size_t size() const { return points.size(); }
};

// ---------------------------------------------------------------------------
// Slices and masks
// ---------------------------------------------------------------------------

/// 2D scalar image, row-major, values expected in [0, 1] after preprocessing.
struct SliceImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    SliceImage() = default;
    SliceImage(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
};

/// Boolean pixel grid stored as one byte per pixel.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    bool at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) { data[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto v : data) n += (v != 0);
        return n;
    }
    bool empty() const {
        for (auto v : data)
            if (v) return false;
        return true;
    }
    bool same_shape(const Mask& o) const { return width == o.width && height == o.height; }
};

/// Per-region masks plus the whole-brain mask, all of identical shape.
/// Invariants: every region mask is a subset of the brain mask, hippocampus
/// and ventricles are disjoint, and interior = brain minus the other three.
struct RegionMasks {
    Mask brain;
    std::array<Mask, kRegionCount> region;

    const Mask& of(RegionLabel r) const { return region[static_cast<std::size_t>(r)]; }
    Mask& of(RegionLabel r) { return region[static_cast<std::size_t>(r)]; }
};

struct PixelCoord {
    int x = 0;
    int y = 0;
    bool operator==(const PixelCoord&) const = default;
};

// ---------------------------------------------------------------------------
// Coordinate normalization
// ---------------------------------------------------------------------------

/// Maps a pixel coordinate to [-1, 1]: pixel centers land at
/// 2*(px + 0.5)/extent - 1, so clouds are resolution-independent.
inline double normalize_coord(double px, int extent) {
    if (extent <= 0) throw std::invalid_argument("normalize_coord: extent must be positive");
    return 2.0 * (px + 0.5) / static_cast<double>(extent) - 1.0;
}

inline double denormalize_coord(double x, int extent) {
    if (extent <= 0) throw std::invalid_argument("denormalize_coord: extent must be positive");
    return (x + 1.0) * 0.5 * static_cast<double>(extent) - 0.5;
}

/// Normalizes a sequence of pixel-space (px, py) pairs; order preserved.
inline std::vector<std::array<double, 2>> normalize_coordinates(
    const std::vector<std::array<double, 2>>& raw_points, int width, int height) {
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("normalize_coordinates: degenerate image extent");
    std::vector<std::array<double, 2>> out;
    out.reserve(raw_points.size());
    for (const auto& p : raw_points)
        out.push_back({normalize_coord(p[0], width), normalize_coord(p[1], height)});
    return out;
}

// ---------------------------------------------------------------------------
// Cloud validation
// ---------------------------------------------------------------------------

struct Violation {
    std::size_t point_index;  // npos for cloud-level violations
    std::string rule;

    static constexpr std::size_t kCloudLevel = static_cast<std::size_t>(-1);
};

struct ValidationResult {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

/// Checks the cloud size and every per-point invariant. Violations are data,
/// not failures: the result lists each offending point index and rule.
inline ValidationResult validate_cloud(const PointCloud& cloud, std::size_t expected_n) {
    ValidationResult res;
    if (cloud.points.size() != expected_n) {
        res.violations.push_back({Violation::kCloudLevel,
                                  "size " + std::to_string(cloud.points.size()) +
                                      " != expected " + std::to_string(expected_n)});
    }
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        const LabeledPoint& p = cloud.points[i];
        if (!std::isfinite(p.x) || p.x < -1.0f || p.x > 1.0f)
            res.violations.push_back({i, "x out of [-1, 1]"});
        if (!std::isfinite(p.y) || p.y < -1.0f || p.y > 1.0f)
            res.violations.push_back({i, "y out of [-1, 1]"});
        if (!std::isfinite(p.intensity) || p.intensity < 0.0f || p.intensity > 1.0f)
            res.violations.push_back({i, "intensity out of [0, 1]"});
        if (static_cast<std::uint8_t>(p.region) >= kRegionCount)
            res.violations.push_back({i, "region code out of range"});
    }
    return res;
}

}  // namespace neuroaps
