#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuroaps/core_types.hpp"
#include "neuroaps/io.hpp"
#include "neuroaps/phantom.hpp"
#include "neuroaps/sampler.hpp"

// Glue between manifests on disk and in-memory cloud datasets. Clouds are
// sampled once per (sampler kind, point count, sample id) and cached as APC1
// files; training stochasticity never touches the sampling seed.

namespace neuroaps {

struct CloudDataset {
    std::vector<PointCloud> train;
    std::vector<PointCloud> test;
};

inline io::PhantomSample load_phantom_record(const io::ManifestRecord& record,
                                             const std::filesystem::path& base_dir) {
    return io::read_phantom_file(base_dir / record.path);
}

/// Deterministic per-sample sampling seed; independent of manifest order.
inline std::uint64_t cloud_seed(std::uint64_t base_seed, const std::string& sample_id) {
    return derive_seed(base_seed, tag_hash("cloud"), io::fnv1a64(sample_id));
}

inline PointCloud sample_record_cloud(const io::PhantomSample& phantom,
                                      const io::ManifestRecord& record, SamplerKind kind,
                                      const SamplingBudget& budget, std::uint64_t base_seed) {
    PointCloud cloud;
    if (kind == SamplerKind::APS)
        cloud = aps_sample(phantom.slice, phantom.masks, budget,
                           cloud_seed(base_seed, record.sample_id));
    else
        cloud = ablation_sample(kind, phantom.slice, phantom.masks, budget.total_n,
                                cloud_seed(base_seed, record.sample_id));
    cloud.class_label = record.label;
    cloud.source_id = record.sample_id;
    return cloud;
}

/// Loads (or samples and caches) the clouds for every manifest record and
/// splits them per the manifest's split tags. An empty cache_dir disables the
/// on-disk cache.
inline CloudDataset prepare_clouds(const std::vector<io::ManifestRecord>& manifest,
                                   const std::filesystem::path& base_dir, SamplerKind kind,
                                   const SamplingBudget& budget, std::uint64_t base_seed,
                                   const std::filesystem::path& cache_dir = {}) {
    std::filesystem::path bucket;
    if (!cache_dir.empty()) {
        char tag[64];
        std::snprintf(tag, sizeof tag, "%s_%d_%016llx", sampler_name(kind), budget.total_n,
                      static_cast<unsigned long long>(base_seed));
        bucket = cache_dir / tag;
        std::filesystem::create_directories(bucket);
    }

    CloudDataset out;
    for (const auto& record : manifest) {
        PointCloud cloud;
        const std::filesystem::path cached =
            bucket.empty() ? std::filesystem::path{} : bucket / (record.sample_id + ".apc");
        if (!cached.empty() && std::filesystem::exists(cached)) {
            cloud = io::read_cloud_file(cached);
            cloud.source_id = record.sample_id;
        } else {
            cloud = sample_record_cloud(load_phantom_record(record, base_dir), record, kind,
                                        budget, base_seed);
            if (!cached.empty()) io::write_cloud_file(cached, cloud);
        }
        (record.split == io::Split::Train ? out.train : out.test).push_back(std::move(cloud));
    }
    return out;
}

/// Writes phantoms plus their manifest under out_dir (slices in a "slices"
/// subdirectory); returns the manifest records.
inline std::vector<io::ManifestRecord> write_phantom_dataset(
    const PhantomConfig& config, int n_per_class, double split_fraction,
    const std::filesystem::path& out_dir) {
    const auto samples = generate_dataset(config, n_per_class, split_fraction);
    std::filesystem::create_directories(out_dir / "slices");
    std::vector<io::ManifestRecord> records;
    records.reserve(samples.size());
    for (const auto& s : samples) {
        const io::PhantomSample phantom = generate_phantom(config, s.label, s.sample_index);
        const std::string rel = "slices/" + s.sample_id + ".aph";
        io::write_phantom_file(out_dir / rel, phantom);
        records.push_back({s.sample_id, s.label, rel, s.split});
    }
    io::write_manifest_file(out_dir / "manifest.txt", records);
    return records;
}

}  // namespace neuroaps
