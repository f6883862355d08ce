#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuroaps/core_types.hpp"
#include "neuroaps/io.hpp"
#include "neuroaps/mask_ops.hpp"
#include "neuroaps/rng.hpp"

// Deterministic synthetic 2D brain phantom. The class signal is morphological:
// AD samples get enlarged ventricles and a shrunken hippocampus, so the signal
// is localized in exactly the regions the priority sampler over-samples.

namespace neuroaps {

struct PhantomConfig {
    int image_size = 128;

    // Class-dependent morphology. Ventricle scales multiply blob radii, the
    // hippocampus scales multiply blob area.
    double ventricle_scale_ad = 1.6;
    double ventricle_scale_cn = 1.0;
    double hippocampus_scale_ad = 0.6;
    double hippocampus_scale_cn = 1.0;

    // Per-region mean intensities (the slice is emitted already in [0, 1]).
    double background_intensity = 0.03;
    double interior_intensity = 0.60;
    double surface_intensity = 0.80;
    double ventricle_intensity = 0.20;
    double hippocampus_intensity = 0.45;

    double noise_sigma = 0.05;
    int surface_thickness = 2;  // band width in pixels just inside the brain boundary
    std::uint64_t seed = 0;

    void validate() const {
        if (image_size < 32)
            throw std::invalid_argument("phantom: image_size must be >= 32");
        if (ventricle_scale_ad <= 0 || ventricle_scale_cn <= 0 || hippocampus_scale_ad <= 0 ||
            hippocampus_scale_cn <= 0)
            throw std::invalid_argument("phantom: scales must be positive");
        if (ventricle_scale_ad <= ventricle_scale_cn)
            throw std::invalid_argument("phantom: AD ventricle scale must exceed CN");
        if (hippocampus_scale_ad >= hippocampus_scale_cn)
            throw std::invalid_argument("phantom: AD hippocampus scale must be below CN");
        if (noise_sigma < 0) throw std::invalid_argument("phantom: noise_sigma must be >= 0");
        if (surface_thickness < 1)
            throw std::invalid_argument("phantom: surface_thickness must be >= 1");
    }
};

namespace detail {

struct RotatedEllipse {
    double cx, cy;    // center, pixels
    double a, b;      // semi-axes, pixels
    double angle;     // radians

    bool contains(double px, double py) const {
        const double dx = px - cx, dy = py - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = dx * ca + dy * sa;
        const double v = -dx * sa + dy * ca;
        return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
};

inline Mask fill_ellipses(int size, const std::vector<RotatedEllipse>& shapes) {
    Mask m(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (const auto& e : shapes)
                if (e.contains(x, y)) {
                    m.set(x, y, true);
                    break;
                }
    return m;
}

}  // namespace detail

/// Generates one phantom. Deterministic for (config.seed, cls, sample_index):
/// the geometry jitter depends on (seed, index) only, the class enters through
/// the morphology scales and the noise stream, so AD/CN pairs at the same
/// index share their underlying "subject" geometry.
inline io::PhantomSample generate_phantom(const PhantomConfig& config, ClassLabel cls,
                                          int sample_index) {
    config.validate();
    const int size = config.image_size;
    const double s = static_cast<double>(size);

    Rng geo(derive_seed(config.seed, tag_hash("phantom-geometry"),
                        static_cast<std::uint64_t>(sample_index)));
    Rng noise(derive_seed(config.seed, tag_hash("phantom-noise"),
                          static_cast<std::uint64_t>(cls),
                          static_cast<std::uint64_t>(sample_index)));

    // Brain outline: ellipse with a low-order sinusoidal radius perturbation.
    const double cx = s * 0.5 + geo.uniform(-1.5, 1.5) * s / 128.0;
    const double cy = s * 0.5 + geo.uniform(-1.5, 1.5) * s / 128.0;
    const double ax = s * 0.42 * (1.0 + geo.uniform(-0.04, 0.04));
    const double by = s * 0.48 * (1.0 + geo.uniform(-0.04, 0.04));
    double amp[3], phase[3];
    for (int k = 0; k < 3; ++k) {
        amp[k] = geo.uniform(0.004, 0.013);
        phase[k] = geo.uniform(0.0, 2.0 * 3.14159265358979323846);
    }

    Mask brain(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double dist = std::sqrt(dx * dx + dy * dy);
            if (dist == 0.0) {
                brain.set(x, y, true);
                continue;
            }
            const double theta = std::atan2(dy, dx);
            // ellipse radius along theta
            const double ec = by * std::cos(theta), es = ax * std::sin(theta);
            double r = ax * by / std::sqrt(ec * ec + es * es);
            double ripple = 0.0;
            for (int k = 0; k < 3; ++k) ripple += amp[k] * std::sin((k + 2) * theta + phase[k]);
            r *= 1.0 + ripple;
            brain.set(x, y, dist <= r);
        }

    // Class-dependent structure scales with mild per-subject jitter.
    const bool ad = cls == ClassLabel::AD;
    const double vent_jit = 1.0 + geo.uniform(-0.05, 0.05);
    const double hip_jit = 1.0 + geo.uniform(-0.05, 0.05);
    const double vent_scale = (ad ? config.ventricle_scale_ad : config.ventricle_scale_cn) * vent_jit;
    const double hip_area = (ad ? config.hippocampus_scale_ad : config.hippocampus_scale_cn) * hip_jit;
    const double hip_scale = std::sqrt(hip_area);

    const double vent_dx = geo.uniform(-1.0, 1.0) * s / 128.0;
    const double vent_dy = geo.uniform(-1.0, 1.0) * s / 128.0;
    const double vent_rot = 0.25 + geo.uniform(-0.05, 0.05);
    std::vector<detail::RotatedEllipse> vents = {
        {cx - 0.07 * s + vent_dx, cy - 0.03 * s + vent_dy, 0.045 * s * vent_scale,
         0.10 * s * vent_scale, vent_rot},
        {cx + 0.07 * s + vent_dx, cy - 0.03 * s + vent_dy, 0.045 * s * vent_scale,
         0.10 * s * vent_scale, -vent_rot},
    };

    const double hip_dx = geo.uniform(-1.0, 1.0) * s / 128.0;
    const double hip_dy = geo.uniform(-1.0, 1.0) * s / 128.0;
    const double hip_rot = geo.uniform(-0.2, 0.2);
    std::vector<detail::RotatedEllipse> hips = {
        {cx - 0.18 * s + hip_dx, cy + 0.12 * s + hip_dy, 0.050 * s * hip_scale,
         0.038 * s * hip_scale, hip_rot},
        {cx + 0.18 * s + hip_dx, cy + 0.12 * s + hip_dy, 0.050 * s * hip_scale,
         0.038 * s * hip_scale, -hip_rot},
    };

    // Carving order keeps the four region masks pairwise disjoint and inside
    // the brain: surface band first, then ventricles, then hippocampus.
    const Mask surface = mask_and_not(brain, erode(brain, config.surface_thickness));
    const Mask core = mask_and_not(brain, surface);
    Mask vent = mask_and(detail::fill_ellipses(size, vents), core);
    Mask hip = mask_and_not(mask_and(detail::fill_ellipses(size, hips), core), vent);
    Mask interior = mask_and_not(mask_and_not(core, vent), hip);

    io::PhantomSample out;
    out.label = cls;
    out.masks.brain = brain;
    out.masks.of(RegionLabel::Hippocampus) = std::move(hip);
    out.masks.of(RegionLabel::Ventricles) = std::move(vent);
    out.masks.of(RegionLabel::Surface) = surface;
    out.masks.of(RegionLabel::Interior) = std::move(interior);

    out.slice = SliceImage(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double mean = config.background_intensity;
            if (out.masks.of(RegionLabel::Ventricles).at(x, y))
                mean = config.ventricle_intensity;
            else if (out.masks.of(RegionLabel::Hippocampus).at(x, y))
                mean = config.hippocampus_intensity;
            else if (out.masks.of(RegionLabel::Surface).at(x, y))
                mean = config.surface_intensity;
            else if (out.masks.brain.at(x, y))
                mean = config.interior_intensity;
            double v = mean + config.noise_sigma * noise.normal();
            if (v < 0.0) v = 0.0;
            if (v > 1.0) v = 1.0;
            out.slice.at(x, y) = static_cast<float>(v);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

struct SampleRecord {
    std::string sample_id;
    ClassLabel label = ClassLabel::CN;
    int sample_index = 0;  // feeds generate_phantom; unique across the dataset
    io::Split split = io::Split::Train;
};

/// Produces n_per_class samples per class with a per-sample-id stratified
/// split. Sample indices are unique dataset-wide: AD uses 0..n-1, CN uses
/// n..2n-1.
inline std::vector<SampleRecord> generate_dataset(const PhantomConfig& config, int n_per_class,
                                                  double split_fraction = 0.8) {
    config.validate();
    if (n_per_class < 5) throw std::invalid_argument("dataset: n_per_class must be >= 5");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw std::invalid_argument("dataset: split_fraction must lie in (0, 1)");
    const int n_train = static_cast<int>(std::floor(split_fraction * n_per_class));
    if (n_train == n_per_class) throw std::invalid_argument("dataset: split leaves an empty test set");
    if (n_train == 0) throw std::invalid_argument("dataset: split leaves an empty train set");

    std::vector<SampleRecord> records;
    records.reserve(2 * static_cast<std::size_t>(n_per_class));
    for (ClassLabel cls : {ClassLabel::AD, ClassLabel::CN}) {
        std::vector<int> order(n_per_class);
        for (int i = 0; i < n_per_class; ++i) order[i] = i;
        Rng rng(derive_seed(config.seed, tag_hash("dataset-split"),
                            static_cast<std::uint64_t>(cls)));
        rng.shuffle(order);

        std::vector<io::Split> split(n_per_class, io::Split::Test);
        for (int i = 0; i < n_train; ++i) split[order[i]] = io::Split::Train;

        const int index_base = cls == ClassLabel::AD ? 0 : n_per_class;
        const char* prefix = cls == ClassLabel::AD ? "ad" : "cn";
        for (int i = 0; i < n_per_class; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "%s_%04d", prefix, i);
            records.push_back({id, cls, index_base + i, split[i]});
        }
    }
    return records;
}

}  // namespace neuroaps
